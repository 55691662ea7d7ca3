"""Registry of finite-difference gradient checks for every differentiable op."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, finite_diff_check, make_result
from .geometry import CameraIntrinsics, RigidTransform, axis_angle_to_matrix, warp_image
from .losses import LossConfig, photometric_loss, smoothness_loss, ssim
from .ops import ConvBlock, CumulativeConvParams, DirectionScales, cumulative_convolution, \
    direction_aware_block

VALUE_TOL = 1e-5
PATH_TOL = 1e-4  # sampling-grid and scale paths


@dataclass
class GradCase:
    name: str
    build: Callable[[np.random.Generator], Tuple[Callable[..., Tensor], List[Tensor]]]
    tol: float = VALUE_TOL
    eps: float = 1e-6


@dataclass
class GradResult:
    name: str
    max_rel_error: float
    tol: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tol)


def _scalar_fn(op: Callable[..., Tensor], shape_rng_seed: int = 99):
    """Wrap ``op`` as a fixed random linear functional of its output."""
    weights = {}

    def fn(*inputs):
        out = op(*inputs)
        if out.size == 1:
            return out
        if out.shape not in weights:
            weights[out.shape] = Tensor(
                np.random.default_rng(shape_rng_seed).uniform(0.5, 1.5, size=out.shape))
        return ad.reduce_sum(out * weights[out.shape])

    return fn


def _leaf(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


# -- case builders ------------------------------------------------------------

def _conv(stride, padding, size):
    def build(rng):
        x, w, b = _leaf(rng, 2, 3, size, size), _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)
        return _scalar_fn(lambda x, w, b: ad.conv2d(x, w, b, stride, padding)), [x, w, b]
    return build


def _sample_grid():
    rng_grid = np.random.default_rng(7)
    grid = rng_grid.uniform(-0.95, 0.95, size=(2, 4, 5, 2))
    return grid


def _bilinear_values(rng):
    grid = Tensor(_sample_grid())
    x = _leaf(rng, 2, 2, 5, 6)
    return _scalar_fn(lambda x: ad.bilinear_sample(x, grid)), [x]


def _bilinear_grid(rng):
    x = Tensor(rng.uniform(-1, 1, size=(2, 2, 5, 6)))
    g = Tensor(_sample_grid(), requires_grad=True)
    return _scalar_fn(lambda g: ad.bilinear_sample(x, g)), [g]


def _unary(op, lo=-1.0, hi=1.0):
    def build(rng):
        return _scalar_fn(op), [_leaf(rng, 2, 3, 4, lo=lo, hi=hi)]
    return build


def _binary(kind):
    def build(rng):
        a = _leaf(rng, 2, 3, 4)
        b = _leaf(rng, 3, 4, lo=0.5, hi=1.5)  # broadcast + nonzero divisor
        return _scalar_fn(lambda a, b: ad.elementwise(kind, a, b)), [a, b]
    return build


def _matmul(rng):
    return _scalar_fn(ad.matmul), [_leaf(rng, 2, 3, 4), _leaf(rng, 4, 5)]


def _reductions(rng):
    x = _leaf(rng, 2, 3, 4)
    return _scalar_fn(lambda x: ad.reduce_mean(x, axis=1)
                      * ad.reduce_sum(x, axis=2, keepdims=True)[:, 0, :]), [x]


def _shape_ops(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 1, 4)

    def op(a, b):
        c = ad.concat([a, b], axis=1)
        return ad.transpose(ad.reshape(c, (2, 16)), (1, 0))[3:11] * 2.0
    return _scalar_fn(op), [a, b]


def _clip_minmax(rng):
    a, b = _leaf(rng, 2, 3, 4), _leaf(rng, 2, 3, 4)
    return _scalar_fn(lambda a, b: ad.minimum(a, b) + ad.maximum(a, b) * 0.5
                      + ad.clip(a, -0.5, 0.5)), [a, b]


def _x4(rng, c=2, h=6, w=6):
    return _leaf(rng, 2, c, h, w)


def _dam_weights(rng):
    x = _x4(rng, 2, 6, 8)
    params = [_leaf(rng, 3, 2, 3, 3, lo=-0.5, hi=0.5), _leaf(rng, 3, lo=-0.5, hi=0.5),
              _leaf(rng, 3, 3, 3, 3, lo=-0.5, hi=0.5), _leaf(rng, 3, lo=-0.5, hi=0.5)]
    scales = DirectionScales.from_values(1.13, 0.87, requires_grad=False)

    def op(x, w1, b1, w2, b2):
        return direction_aware_block(x, scales, ConvBlock(w1, b1, w2, b2))
    return _scalar_fn(op), [x] + params


def _dam_scales(rng):
    x = Tensor(rng.uniform(-1, 1, size=(1, 2, 6, 8)))
    block = ConvBlock(*[Tensor(rng.uniform(-0.5, 0.5, size=s))
                        for s in [(3, 2, 3, 3), (3,), (3, 3, 3, 3), (3,)]])
    log_sx = Tensor(np.log(1.13), requires_grad=True)
    log_sy = Tensor(np.log(0.87), requires_grad=True)
    return _scalar_fn(lambda a, b: direction_aware_block(x, DirectionScales(a, b), block)), \
        [log_sx, log_sy]


def _cumconv(rng):
    x, w, b = _x4(rng, 3, 6, 5), _leaf(rng, 4, 3, 3, 3), _leaf(rng, 4)
    return _scalar_fn(lambda x, w, b: cumulative_convolution(x, CumulativeConvParams(w, b))), \
        [x, w, b]


def _ssim(rng):
    a = _leaf(rng, 1, 3, 5, 6, lo=0.0, hi=1.0)
    b = _leaf(rng, 1, 3, 5, 6, lo=0.0, hi=1.0)
    return _scalar_fn(ssim), [a, b]


def _photometric(rng):
    target = Tensor(rng.uniform(0, 1, size=(1, 3, 5, 6)))
    m1 = Tensor((rng.uniform(size=(1, 1, 5, 6)) > 0.2).astype(float))
    m2 = Tensor((rng.uniform(size=(1, 1, 5, 6)) > 0.2).astype(float))
    a = _leaf(rng, 1, 3, 5, 6, lo=0.0, hi=1.0)
    b = _leaf(rng, 1, 3, 5, 6, lo=0.0, hi=1.0)
    return (lambda a, b: photometric_loss([(a, m1), (b, m2)], target, LossConfig())), [a, b]


def _smoothness(rng):
    image = rng.uniform(0, 1, size=(2, 3, 5, 6))
    d = _leaf(rng, 2, 1, 5, 6, lo=0.1, hi=1.0)
    return (lambda d: smoothness_loss(d, image)), [d]


def _warp_depth(rng):
    h, w = 6, 8
    K = CameraIntrinsics(fx=6.0, fy=6.0, ox=3.5, oy=2.5)
    src = Tensor(rng.uniform(0, 1, size=(1, 2, h, w)))
    pose = RigidTransform(Tensor(np.eye(3)), Tensor(np.array([0.07, -0.03, 0.05])))
    depth = _leaf(rng, 1, 1, h, w, lo=2.0, hi=4.0)
    return _scalar_fn(lambda d: warp_image(src, d, pose, K)[0]), [depth]


def _rodrigues(rng):
    return _scalar_fn(axis_angle_to_matrix), [_leaf(rng, 2, 3, lo=-0.8, hi=0.8)]


def _corrupted_sigmoid(x: Tensor) -> Tensor:
    """Sigmoid with a deliberately wrong backward (drops the (1 - s) factor)."""
    s = 1.0 / (1.0 + np.exp(-x.data))
    return make_result(s, (x,), lambda g: (g * s,), "corrupted_sigmoid")


REGISTRY: Dict[str, GradCase] = {c.name: c for c in [
    GradCase("conv2d", _conv(1, 1, 6)),
    GradCase("conv2d_stride2", _conv(2, 1, 7)),
    GradCase("bilinear_sample_values", _bilinear_values),
    GradCase("bilinear_sample_grid", _bilinear_grid, tol=PATH_TOL),
    GradCase("resize_bilinear", _unary(lambda x: ad.resize_bilinear(
        ad.reshape(x, (1, 2, 3, 4)), 5, 7))),
    GradCase("cumsum_from_bottom", _unary(lambda x: ad.cumsum_from_bottom(
        ad.reshape(x, (1, 2, 4, 3))))),
    GradCase("elementwise_add", _binary("add")),
    GradCase("elementwise_sub", _binary("sub")),
    GradCase("elementwise_mul", _binary("mul")),
    GradCase("elementwise_div", _binary("div")),
    GradCase("exp_log_sqrt_pow", _unary(lambda x: ad.log(x) + ad.sqrt(x) * ad.exp(x)
                                        + ad.power(x, 3.0), lo=0.2, hi=2.0)),
    GradCase("abs", _unary(ad.absolute, lo=0.1, hi=1.0)),
    GradCase("clip_min_max", _clip_minmax),
    GradCase("matmul", _matmul),
    GradCase("reductions", _reductions),
    GradCase("shape_ops", _shape_ops),
    GradCase("activation_elu", _unary(lambda x: ad.activation("elu", x), lo=-2.0, hi=2.0)),
    GradCase("activation_sigmoid", _unary(lambda x: ad.activation("sigmoid", x), -4.0, 4.0)),
    GradCase("upsample_nearest2x", _unary(lambda x: ad.upsample_nearest2x(
        ad.reshape(x, (1, 2, 3, 4))))),
    GradCase("box_filter3", _unary(lambda x: ad.box_filter3(ad.reshape(x, (1, 1, 4, 6))))),
    GradCase("pad_reflect1", _unary(lambda x: ad.pad_reflect1(ad.reshape(x, (1, 2, 3, 4))))),
    GradCase("direction_aware_block_weights", _dam_weights),
    GradCase("direction_aware_block_log_scales", _dam_scales, tol=PATH_TOL, eps=1e-6),
    GradCase("cumulative_convolution", _cumconv),
    GradCase("ssim", _ssim),
    GradCase("photometric_loss", _photometric),
    GradCase("smoothness_loss", _smoothness),
    GradCase("warp_image_depth", _warp_depth, tol=PATH_TOL, eps=1e-5),
    GradCase("axis_angle_to_matrix", _rodrigues),
]}

NEGATIVE_CONTROL = GradCase("corrupted_sigmoid (negative control)",
                            _unary(_corrupted_sigmoid, -2.0, 2.0))


def run_case(case: GradCase, seed: int = 0) -> GradResult:
    rng = np.random.default_rng(seed)
    fn, inputs = case.build(rng)
    t0 = time.perf_counter()
    err = finite_diff_check(fn, inputs, eps=case.eps)
    return GradResult(case.name, err, case.tol, time.perf_counter() - t0)


def run_all(cases: Sequence[GradCase] = None, seed: int = 0) -> List[GradResult]:
    cases = list(REGISTRY.values()) if cases is None else list(cases)
    return [run_case(c, seed) for c in cases]


def format_results(results: Sequence[GradResult], timings: bool = False) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'op':<{width}}  {'max rel err':>12}  {'tol':>7}  result"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"{r.name:<{width}}  {r.max_rel_error:>12.3e}  {r.tol:>7.0e}  {status}"
        if timings:
            line += f"  {r.seconds:.2f}s"
        lines.append(line)
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} passed")
    return "\n".join(lines)
