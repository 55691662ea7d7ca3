"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """|a-b| / max(|a|, |b|, floor), elementwise."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def numerical_gradient(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
                       eps: float = 1e-6, entries: Optional[Sequence[np.ndarray]] = None):
    """Central differences; ``entries`` restricts each input to given flat indices."""
    grads = []
    with no_grad():
        for k, t in enumerate(inputs):
            g = np.zeros(t.shape, dtype=np.float64)
            flat = t.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in (range(flat.size) if entries is None else entries[k]):
                orig = flat[i]
                flat[i] = orig + eps
                plus = float(fn(*inputs).data.sum())
                flat[i] = orig - eps
                minus = float(fn(*inputs).data.sum())
                flat[i] = orig
                gflat[i] = (plus - minus) / (2 * eps)
            grads.append(g)
    return grads


def analytic_gradient(fn: Callable[..., Tensor], inputs: Sequence[Tensor]):
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    out.backward()
    return [np.zeros(t.shape) if t.grad is None else t.grad for t in inputs]


def finite_diff_check(fn: Callable[..., Tensor], inputs: Sequence[Tensor],
                      eps: float = 1e-6, max_entries: Optional[int] = None,
                      seed: int = 0) -> float:
    """Worst relative error between tape and central-difference gradients.

    ``fn`` maps the input tensors to a scalar tensor and must rebuild its graph
    on every call. Inputs are perturbed in place and restored. With
    ``max_entries`` only a seeded random subset of that many entries per input
    is differenced.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for t in inputs:
        if not t.data.flags.writeable or not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data).copy()
    entries = None
    if max_entries is not None:
        rng = np.random.default_rng(seed)
        entries = [np.sort(rng.choice(t.size, size=min(max_entries, t.size), replace=False))
                   for t in inputs]
    analytic = analytic_gradient(fn, inputs)
    numeric = numerical_gradient(fn, inputs, eps, entries)
    worst = 0.0
    for k, (a, b) in enumerate(zip(analytic, numeric)):
        if entries is not None:
            a, b = a.reshape(-1)[entries[k]], b.reshape(-1)[entries[k]]
        if a.size:
            worst = max(worst, float(relative_error(a, b).max()))
    return worst
