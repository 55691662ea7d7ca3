"""Direction-aware resampling block and cumulative convolution."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .autodiff import (
    Tensor,
    activation,
    clip,
    concat,
    conv2d,
    cumsum_from_bottom,
    exp,
    sample_pixels,
)
from .errors import DimensionError

SCALE_MIN = 0.25
SCALE_MAX = 4.0


@dataclass
class DirectionScales:
    """Learnable per-axis scale pair of the affine map diag(s_x, s_y, 1).

    Stored as free log-parameters; the effective scale is ``exp(log_s)``
    clamped to [0.25, 4]. Zero-initialised logs give s_x = s_y = 1 exactly.
    """

    log_sx: Tensor
    log_sy: Tensor

    @classmethod
    def unit(cls, requires_grad: bool = True) -> "DirectionScales":
        return cls(Tensor(0.0, requires_grad=requires_grad, name="log_sx"),
                   Tensor(0.0, requires_grad=requires_grad, name="log_sy"))

    @classmethod
    def from_values(cls, sx: float, sy: float, requires_grad: bool = True) -> "DirectionScales":
        return cls(Tensor(math.log(sx), requires_grad=requires_grad, name="log_sx"),
                   Tensor(math.log(sy), requires_grad=requires_grad, name="log_sy"))

    def sx(self) -> Tensor:
        return clip(exp(self.log_sx), SCALE_MIN, SCALE_MAX)

    def sy(self) -> Tensor:
        return clip(exp(self.log_sy), SCALE_MIN, SCALE_MAX)

    def values(self) -> Tuple[float, float]:
        return float(self.sx().data), float(self.sy().data)

    def parameters(self):
        return [self.log_sx, self.log_sy]

    def matrix(self) -> np.ndarray:
        sx, sy = self.values()
        return np.diag([sx, sy, 1.0])

    def inverse_matrix(self) -> np.ndarray:
        sx, sy = self.values()
        return np.diag([1.0 / sx, 1.0 / sy, 1.0])


def scaled_size(scale: float, size: int) -> int:
    """round-half-up(scale * size), floored at 1."""
    return max(1, int(math.floor(scale * size + 0.5)))


def _axis_coords(scale: Tensor, n_from: int, n_to: int, inverse: bool) -> Tensor:
    # Center-aligned pure scaling. Forward: output pixel j of the scaled map
    # reads source position (j - c_to)/s + c_from; inverse multiplies by s.
    c_from = (n_from - 1) / 2.0
    c_to = (n_to - 1) / 2.0
    offsets = Tensor(np.arange(n_to, dtype=np.float64) - c_to)
    if inverse:
        return offsets * scale + c_from
    return offsets / scale + c_from


def affine_grid(scales: DirectionScales, in_h: int, in_w: int, inverse: bool = False,
                normalized: bool = True):
    """Sampling grid realising the scaling map (or its inverse).

    Forward mode returns a grid of shape [1, out_h, out_w, 2] addressing the
    (in_h, in_w) input, with out dims = round(s * in dims). Inverse mode
    returns a grid of shape [1, in_h, in_w, 2] addressing the scaled map, which
    takes features back to (in_h, in_w). With ``normalized`` the coordinates
    lie in the [-1, 1] convention of :func:`bilinear_sample`; otherwise they
    are pixel coordinates for :func:`sample_pixels`.

    Returns ``(grid, out_h, out_w)``.
    """
    if in_h < 2 or in_w < 2:
        raise DimensionError("affine_grid needs in_h, in_w >= 2")
    sx, sy = scales.sx(), scales.sy()
    sh = scaled_size(float(sy.data), in_h)
    sw = scaled_size(float(sx.data), in_w)
    if inverse:
        u = _axis_coords(sx, sw, in_w, inverse=True)
        v = _axis_coords(sy, sh, in_h, inverse=True)
        out_h, out_w, src_h, src_w = in_h, in_w, sh, sw
    else:
        u = _axis_coords(sx, in_w, sw, inverse=False)
        v = _axis_coords(sy, in_h, sh, inverse=False)
        out_h, out_w, src_h, src_w = sh, sw, in_h, in_w
    if normalized:
        u = u * (2.0 / (src_w - 1)) - 1.0 if src_w > 1 else u * 0.0
        v = v * (2.0 / (src_h - 1)) - 1.0 if src_h > 1 else v * 0.0
    zeros = Tensor(np.zeros((1, out_h, out_w, 1)))
    grid = concat([u.reshape(1, 1, out_w, 1) + zeros,
                   v.reshape(1, out_h, 1, 1) + zeros], axis=-1)
    return grid, out_h, out_w


@dataclass
class ConvBlock:
    """Two 3x3 conv + ELU layers (the feature extractor inside the DaM)."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        x = activation("elu", conv2d(x, self.w1, self.b1, 1, 1))
        return activation("elu", conv2d(x, self.w2, self.b2, 1, 1))

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]


def direction_aware_block(x: Tensor, scales: DirectionScales, block) -> Tensor:
    """Resample onto the scaled grid, run ``block``, resample back to (H, W)."""
    h, w = x.shape[2:]
    fwd, _, _ = affine_grid(scales, h, w, inverse=False, normalized=False)
    y = block(sample_pixels(x, fwd))
    back, _, _ = affine_grid(scales, h, w, inverse=True, normalized=False)
    return sample_pixels(y, back)


@dataclass
class CumulativeConvParams:
    weight: Tensor  # [F, C, 3, 3]
    bias: Tensor  # [F]
    activation: str = "elu"

    def __post_init__(self):
        kh, kw = self.weight.shape[2:]
        if kh != kw or kh % 2 == 0:
            raise DimensionError("cumulative conv kernel must be square and odd")

    def parameters(self):
        return [self.weight, self.bias]


def row_counts(h: int, dtype=np.float64) -> np.ndarray:
    """Number of rows summed at each row p: H - p, shaped [1, 1, H, 1]."""
    return (h - np.arange(h, dtype=dtype)).reshape(1, 1, h, 1)


def cumulative_convolution(x: Tensor, params: CumulativeConvParams) -> Tensor:
    """act(mean over rows p..H-1 of conv3x3(x)), per column.

    Row ``p`` (0-based, top to bottom) is divided by ``H - p``, the number of
    accumulated rows, so the bottom row is the plain conv response.
    """
    pad = params.weight.shape[2] // 2
    feats = conv2d(x, params.weight, params.bias, stride=1, padding=pad)
    acc = cumsum_from_bottom(feats)
    return activation(params.activation, acc / Tensor(row_counts(x.shape[2])))


def flops_direction_aware(c_in: int, c_out: int, h: int, w: int,
                          scales: Optional[Sequence[float]] = None) -> int:
    """Conv MACs of a DaM block at the scaled resolution."""
    sx, sy = scales if scales is not None else (1.0, 1.0)
    sh, sw = scaled_size(sy, h), scaled_size(sx, w)
    return 9 * sh * sw * (c_in * c_out + c_out * c_out)
