"""
Reverse-mode autodiff in a few lines
====================================

Build a small graph, run backward, and compare against finite differences.
Run with ``python3 demos/01_autodiff_basics.py``.
"""

import numpy as np

from daccn.autodiff import Tensor, activation, conv2d, reduce_mean
from daccn.autodiff.gradcheck import finite_diff_check
from daccn import checks

rng = np.random.default_rng(0)

# a 3x3 convolution followed by ELU and a mean: a scalar we can differentiate
x = Tensor(rng.normal(size=(1, 2, 6, 6)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 2, 3, 3)) * 0.3, requires_grad=True)
b = Tensor(np.zeros(3), requires_grad=True)

loss = reduce_mean(activation("elu", conv2d(x, w, b, padding=1)))
loss.backward()
print("loss:", loss.item())
print("dL/dw shape:", w.grad.shape, " |dL/dw|_max:", np.abs(w.grad).max())

# the same graph through the finite-difference checker
fn = lambda x, w, b: reduce_mean(activation("elu", conv2d(x, w, b, padding=1)))
err = finite_diff_check(fn, [x, w, b])
print(f"max relative error vs central differences: {err:.2e}")

# the packaged suite covers every differentiable op; the last row is a
# deliberately broken op that must fail
results = checks.run_all()
print(checks.format_results(results))
print("negative control passes?", checks.run_case(checks.NEGATIVE_CONTROL).passed)
