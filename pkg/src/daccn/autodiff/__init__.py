"""Minimal dense-tensor engine with reverse-mode differentiation."""

from .tensor import (
    Node,
    Tensor,
    absolute,
    activation,
    add,
    as_tensor,
    clip,
    concat,
    div,
    elementwise,
    elu,
    exp,
    getitem,
    identity,
    log,
    make_result,
    matmul,
    maximum,
    minimum,
    mul,
    neg,
    no_grad,
    power,
    reduce,
    reduce_mean,
    reduce_sum,
    reshape,
    sigmoid,
    sqrt,
    sub,
    tensor,
    transpose,
)
from .functional import (
    bilinear_sample,
    box_filter3,
    conv2d,
    conv_macs,
    cumsum_from_bottom,
    pad_reflect1,
    resize_bilinear,
    sample_pixels,
    stack_last,
    upsample_nearest2x,
)
from .gradcheck import finite_diff_check, numerical_gradient, relative_error

__all__ = [name for name in dir() if not name.startswith("_")]
