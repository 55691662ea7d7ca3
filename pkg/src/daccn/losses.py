"""Self-supervised objective: SSIM, photometric error, edge-aware smoothness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .autodiff import (
    Tensor,
    absolute,
    as_tensor,
    box_filter3,
    exp,
    maximum,
    minimum,
    pad_reflect1,
    reduce_mean,
    reduce_sum,
)
from .errors import ConfigurationError, ContractError, DegenerateError, DimensionError

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
SMOOTH_EPS = 1e-7
# error assigned to invalid pixels before the per-pixel minimum
_INVALID_ERROR = 1e6


@dataclass
class LossConfig:
    alpha: float = 0.85
    smoothness_weight: float = 1e-3
    min_over_sources: bool = True
    num_scales: int = 4

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in [0, 1]")
        if self.smoothness_weight < 0:
            raise ConfigurationError("smoothness weight must be >= 0")
        if self.num_scales < 1:
            raise ConfigurationError("num_scales must be >= 1")


def ssim(a: Tensor, b: Tensor) -> Tensor:
    """Per-pixel SSIM over 3x3 box windows with reflection padding."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    a, b = pad_reflect1(a), pad_reflect1(b)
    mu_a, mu_b = box_filter3(a), box_filter3(b)
    mu_ab = mu_a * mu_b
    mu_a2, mu_b2 = mu_a * mu_a, mu_b * mu_b
    var_a = box_filter3(a * a) - mu_a2
    var_b = box_filter3(b * b) - mu_b2
    cov = box_filter3(a * b) - mu_ab
    num = (2.0 * mu_ab + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a2 + mu_b2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return num / den


def reprojection_error(pred: Tensor, target: Tensor, alpha: float) -> Tensor:
    """alpha/2 (1 - SSIM) + (1 - alpha) |pred - target|, channel-averaged -> [N,1,H,W]."""
    l1 = reduce_mean(absolute(pred - target), axis=1, keepdims=True)
    if alpha == 0:
        return l1
    s = reduce_mean(1.0 - ssim(pred, target), axis=1, keepdims=True)
    return s * (alpha / 2.0) + l1 * (1.0 - alpha)


def photometric_loss(synthesized: Sequence[Tuple[Tensor, Tensor]], target: Tensor,
                     cfg: LossConfig = LossConfig()) -> Tensor:
    """Masked photometric reprojection loss over one or more warped sources."""
    if not synthesized:
        raise ContractError("photometric_loss needs at least one source")
    target = as_tensor(target)
    errors, masks = [], []
    for image, mask in synthesized:
        image, mask = as_tensor(image), as_tensor(mask)
        if image.shape != target.shape:
            raise DimensionError(f"synthesized {image.shape} vs target {target.shape}")
        errors.append(reprojection_error(image, target, cfg.alpha))
        masks.append(mask)

    if cfg.min_over_sources:
        best = None
        for err, mask in zip(errors, masks):
            penalised = err * mask + (1.0 - mask.data) * _INVALID_ERROR
            best = penalised if best is None else minimum(best, penalised)
        any_valid = np.max(np.stack([m.data for m in masks]), axis=0)
        count = any_valid.sum()
        if count == 0:
            raise DegenerateError("no valid pixel in any source")
        return reduce_sum(best * Tensor(any_valid)) / float(count)

    count = sum(float(m.data.sum()) for m in masks)
    if count == 0:
        raise DegenerateError("no valid pixel in any source")
    total = None
    for err, mask in zip(errors, masks):
        term = reduce_sum(err * mask)
        total = term if total is None else total + term
    return total / count


def _mean_or_zero(x: Tensor) -> Tensor:
    if x.size == 0:
        return Tensor(0.0)
    return reduce_mean(x)


def smoothness_loss(disp: Tensor, image: Tensor) -> Tensor:
    """Edge-aware first-order smoothness of mean-normalised disparity."""
    disp, image = as_tensor(disp), as_tensor(image)
    if disp.shape[0] != image.shape[0] or disp.shape[2:] != image.shape[2:]:
        raise DimensionError(f"disparity {disp.shape} vs image {image.shape}")
    # max() instead of (+eps) keeps exact invariance to rescaling disp
    mean = maximum(reduce_mean(disp, axis=(2, 3), keepdims=True), SMOOTH_EPS)
    d = disp / mean
    img = image.data
    terms = []
    if disp.shape[3] > 1:
        gx = absolute(d[:, :, :, :-1] - d[:, :, :, 1:])
        wx = np.exp(-np.abs(img[:, :, :, :-1] - img[:, :, :, 1:]).mean(axis=1, keepdims=True))
        terms.append(_mean_or_zero(gx * Tensor(wx)))
    if disp.shape[2] > 1:
        gy = absolute(d[:, :, :-1, :] - d[:, :, 1:, :])
        wy = np.exp(-np.abs(img[:, :, :-1, :] - img[:, :, 1:, :]).mean(axis=1, keepdims=True))
        terms.append(_mean_or_zero(gy * Tensor(wy)))
    if not terms:
        return Tensor(0.0)
    return terms[0] if len(terms) == 1 else terms[0] + terms[1]


def total_loss(photometric: Sequence[Tensor], smoothness: Sequence[Tensor],
               cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean over scales of L_p + lambda * L_s."""
    if len(photometric) != len(smoothness):
        raise ContractError("per-scale loss lists differ in length")
    if len(photometric) != cfg.num_scales:
        raise ContractError(f"expected {cfg.num_scales} scales, got {len(photometric)}")
    terms: List[Tensor] = [as_tensor(lp) + as_tensor(ls) * cfg.smoothness_weight
                           for lp, ls in zip(photometric, smoothness)]
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total / float(len(terms))
