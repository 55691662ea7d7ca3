"""
Direction-aware resampling and cumulative convolution
=====================================================

Two building blocks of the model, looked at on toy tensors.
"""

import numpy as np

from daccn.autodiff import Tensor
from daccn.ops import (ConvBlock, CumulativeConvParams, DirectionScales, affine_grid,
                       cumulative_convolution, direction_aware_block, scaled_size)

rng = np.random.default_rng(1)
x = Tensor(rng.normal(size=(1, 4, 12, 20)))
block = ConvBlock(Tensor(rng.normal(size=(4, 4, 3, 3)) * 0.2), Tensor(np.zeros(4)),
                  Tensor(rng.normal(size=(4, 4, 3, 3)) * 0.2), Tensor(np.zeros(4)))

# unit scales: the resample-convolve-resample path reduces to the plain block
unit = direction_aware_block(x, DirectionScales.unit(), block)
print("unit scales bit-identical to the block:", np.array_equal(unit.data, block(x).data))

# stretching rows by 2 means the block sees a map twice as tall
scales = DirectionScales.from_values(sx=1.0, sy=2.0)
print("resampled size:", scaled_size(2.0, 12), "x", scaled_size(1.0, 20))
grid, out_h, out_w = affine_grid(scales, 12, 20)
print("sampling grid:", grid.shape, "for a", out_h, "x", out_w, "map")
y = direction_aware_block(x, scales, block)
print("output keeps the input size:", y.shape)

# cumulative convolution: each row sees everything below it
params = CumulativeConvParams(Tensor(rng.normal(size=(4, 4, 3, 3)) * 0.2), Tensor(np.zeros(4)))
base = cumulative_convolution(x, params).data
bumped = x.data.copy()
bumped[..., 8, :] += 1.0  # perturb one row near the bottom
moved = cumulative_convolution(Tensor(bumped), params).data
changed = np.abs(moved - base).max(axis=(0, 1, 3)) > 0
print("rows affected by a change at row 8:", np.flatnonzero(changed))
