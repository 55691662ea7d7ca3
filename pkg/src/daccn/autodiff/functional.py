"""Image-shaped differentiable primitives (NCHW layout)."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, DimensionError
from .tensor import Tensor, as_tensor, concat, make_result, unbroadcast

# Sample coordinates are snapped to multiples of 2**-42 px so that lattice
# points reached through round-off (x = f*(X*Z/f)/Z) sample exactly.
_SNAP = 2.0 ** 42


def snap_coords(c: np.ndarray) -> np.ndarray:
    return np.round(c * _SNAP) / _SNAP


def _require_rank(x: Tensor, rank: int, what: str) -> None:
    if x.ndim != rank:
        raise DimensionError(f"{what} must have rank {rank}, got shape {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor = None, stride: int = 1,
           padding: int = 0) -> Tensor:
    """Cross-correlation with zero padding, via im2col and one matmul."""
    x, weight = as_tensor(x), as_tensor(weight)
    _require_rank(x, 4, "conv2d input")
    _require_rank(weight, 4, "conv2d weight")
    n, c, h, w = x.shape
    f, c_w, kh, kw = weight.shape
    if c != c_w:
        raise DimensionError(f"input has {c} channels, weight expects {c_w}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (f,):
            raise DimensionError(f"bias shape {bias.shape} != ({f},)")
    if stride < 1 or padding < 0:
        raise ConfigurationError("stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError("kernel larger than padded input")
    if (hp - kh) % stride or (wp - kw) % stride:
        raise ConfigurationError(
            f"output size not integral: ({hp}-{kh})/{stride}, ({wp}-{kw})/{stride}")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
        if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(f, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, f)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (g2.T @ cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, padding:padding + h, padding:padding + w]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return make_result(out, inputs, backward, "conv2d")


def conv_macs(c_in: int, c_out: int, k: int, h_out: int, w_out: int) -> int:
    """Multiply-accumulates of one conv layer on one image."""
    return c_in * c_out * k * k * h_out * w_out


def sample_pixels(x: Tensor, coords: Tensor) -> Tensor:
    """Bilinear lookup of ``x`` at pixel coordinates with border clamping.

    ``coords`` is [N or 1, H', W', 2] holding (column, row) positions where
    integer values are pixel centers. Differentiable in both arguments.
    """
    x, coords = as_tensor(x), as_tensor(coords)
    _require_rank(x, 4, "sample input")
    _require_rank(coords, 4, "sample grid")
    if coords.shape[-1] != 2:
        raise DimensionError(f"grid last dim must be 2, got {coords.shape[-1]}")
    n, c, h, w = x.shape
    gn, ho, wo, _ = coords.shape
    if gn not in (1, n):
        raise DimensionError(f"grid batch {gn} incompatible with input batch {n}")

    snapped = snap_coords(coords.data)
    u = np.broadcast_to(snapped[..., 0], (n, ho, wo)).reshape(n, -1)
    v = np.broadcast_to(snapped[..., 1], (n, ho, wo)).reshape(n, -1)
    inside_u = (u >= 0) & (u <= w - 1)
    inside_v = (v >= 0) & (v <= h - 1)
    # non-finite coordinates yield NaN samples instead of invalid indices
    bad = ~(np.isfinite(u) & np.isfinite(v))
    if bad.any():
        u, v = np.where(bad, 0.0, u), np.where(bad, 0.0, v)
    u = np.clip(u, 0, w - 1)
    v = np.clip(v, 0, h - 1)
    x0 = np.minimum(np.floor(u).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(v).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = u - x0
    wy = v - y0

    flat = x.data.reshape(n, c, h * w)
    idx = [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1]
    vals = [np.take_along_axis(flat, i[:, None, :], axis=2) for i in idx]
    weights = [(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy]
    out = sum(vals[k] * weights[k][:, None, :] for k in range(4))
    if bad.any():
        out = np.where(bad[:, None, :], np.nan, out)
    out = out.reshape(n, c, ho, wo)

    def backward(g):
        g = g.reshape(n, c, -1)
        gx = gc = None
        if x.requires_grad:
            base = (np.arange(n)[:, None, None] * c + np.arange(c)[None, :, None]) * (h * w)
            flat_idx = np.concatenate([(base + i[:, None, :]).ravel() for i in idx])
            contrib = np.concatenate([(g * wt[:, None, :]).ravel() for wt in weights])
            gx = np.bincount(flat_idx, weights=contrib, minlength=n * c * h * w)
            gx = gx.reshape(x.shape).astype(g.dtype, copy=False)
        if coords.requires_grad:
            v00, v01, v10, v11 = vals
            du = ((1 - wy)[:, None, :] * (v01 - v00) + wy[:, None, :] * (v11 - v10))
            dv = ((1 - wx)[:, None, :] * (v10 - v00) + wx[:, None, :] * (v11 - v01))
            du = (g * du).sum(axis=1) * inside_u
            dv = (g * dv).sum(axis=1) * inside_v
            gc = np.stack([du.reshape(n, ho, wo), dv.reshape(n, ho, wo)], axis=-1)
            gc = unbroadcast(gc, coords.shape)
        return gx, gc

    return make_result(out, (x, coords), backward, "bilinear_sample")


def bilinear_sample(x: Tensor, grid: Tensor) -> Tensor:
    """Sample ``x`` [N,C,H,W] at normalized ``grid`` [N,H',W',2].

    Grid entries are (x, y) in [-1, 1]; -1 and +1 are the centers of the first
    and last pixel along each axis. Out-of-range points clamp to the border.
    """
    x, grid = as_tensor(x), as_tensor(grid)
    _require_rank(x, 4, "sample input")
    if grid.ndim != 4 or grid.shape[-1] != 2:
        raise DimensionError(f"grid must be [N,H',W',2], got {grid.shape}")
    h, w = x.shape[2:]
    half = np.array([(w - 1) / 2.0, (h - 1) / 2.0], dtype=x.dtype)
    return sample_pixels(x, (grid + 1.0) * half)


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Half-pixel-aligned bilinear resize (differentiable in ``x``)."""
    h, w = x.shape[2:]
    cols = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    rows = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    grid = np.stack(np.broadcast_arrays(cols[None, :], rows[:, None]), axis=-1)
    return sample_pixels(x, Tensor(grid[None].astype(x.dtype)))


def cumsum_from_bottom(x: Tensor) -> Tensor:
    """out[..., p, q] = sum of x[..., i, q] for i = p .. H-1."""
    x = as_tensor(x)
    _require_rank(x, 4, "cumsum input")
    out = np.flip(np.cumsum(np.flip(x.data, axis=2), axis=2), axis=2)
    # adjoint of a suffix sum is a prefix sum
    return make_result(np.ascontiguousarray(out), (x,),
                       lambda g: (np.cumsum(g, axis=2),), "cumsum_from_bottom")


def upsample_nearest2x(x: Tensor) -> Tensor:
    x = as_tensor(x)
    _require_rank(x, 4, "upsample input")
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return make_result(out, (x,), backward, "upsample_nearest2x")


def box_filter3(x: Tensor) -> Tensor:
    """3x3 mean over valid windows (output loses one pixel per border)."""
    x = as_tensor(x)
    _require_rank(x, 4, "box filter input")
    h, w = x.shape[2:]
    if h < 3 or w < 3:
        raise DimensionError("box filter needs H, W >= 3")
    ho, wo = h - 2, w - 2
    out = np.zeros(x.shape[:2] + (ho, wo), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            out += x.data[:, :, i:i + ho, j:j + wo]
    out /= 9.0

    def backward(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        g9 = g / 9.0
        for i in range(3):
            for j in range(3):
                gx[:, :, i:i + ho, j:j + wo] += g9
        return (gx,)

    return make_result(out, (x,), backward, "box_filter3")


def pad_reflect1(x: Tensor) -> Tensor:
    """Reflection-pad H and W by one pixel (edge pixel not repeated)."""
    x = as_tensor(x)
    _require_rank(x, 4, "pad input")
    if x.shape[2] < 2 or x.shape[3] < 2:
        raise DimensionError("reflection padding needs H, W >= 2")
    out = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="reflect")

    def backward(g):
        g = g.copy()
        g[:, :, 2, :] += g[:, :, 0, :]
        g[:, :, -3, :] += g[:, :, -1, :]
        g = g[:, :, 1:-1, :]
        g[:, :, :, 2] += g[:, :, :, 0]
        g[:, :, :, -3] += g[:, :, :, -1]
        return (np.ascontiguousarray(g[:, :, :, 1:-1]),)

    return make_result(out, (x,), backward, "pad_reflect1")


def stack_last(tensors) -> Tensor:
    """Stack equally shaped tensors along a new trailing axis."""
    return concat([t.reshape(t.shape + (1,)) for t in tensors], axis=-1)
