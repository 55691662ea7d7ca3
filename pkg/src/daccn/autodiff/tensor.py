"""Dense tensor with a define-by-run reverse-mode tape.

Every differentiable operation creates a ``Node`` holding its inputs and a
backward rule. Nodes carry a global creation index, so sorting the nodes
reachable from a loss by that index (descending) replays them in a valid
reverse topological order without recursion.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import ContractError, DimensionError, DomainError, TapeError

ArrayLike = Union[np.ndarray, float, int, Sequence]

_node_counter = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (evaluation, finite differences)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def is_grad_enabled() -> bool:
    return _grad_enabled


class Node:
    __slots__ = ("op", "inputs", "backward_fn", "order")

    def __init__(self, op: str, inputs: Tuple["Tensor", ...], backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.order = next(_node_counter)


def _as_array(data: ArrayLike, dtype=None) -> np.ndarray:
    if isinstance(data, np.ndarray):
        if dtype is not None:
            return data.astype(dtype, copy=False)
        if data.dtype in (np.float32, np.float64):
            return data
        return data.astype(np.float64)
    return np.asarray(data, dtype=dtype or np.float64)


class Tensor:
    """N-dimensional real array taking part in reverse-mode differentiation.

    ``data`` is a numpy array (float64 unless float32 is requested);
    ``grad`` is filled by :meth:`backward` for every tensor created with, or
    derived from, ``requires_grad=True``.
    """

    __array_priority__ = 1000  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None,
                 name: Optional[str] = None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[Node] = None
        self._spent = False

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def op(self) -> str:
        if self._node is not None:
            return self._node.op
        return self.name or "leaf"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        rg = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{rg})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- backward ------------------------------------------------------
    def backward(self) -> None:
        """Populate ``grad`` on every participating tensor.

        Only valid on a scalar (single-element) tensor. A recorded graph can be
        replayed once; a second call raises :class:`TapeError`.
        """
        if self.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._spent:
            raise TapeError("graph already consumed by a previous backward pass")
        if not self.requires_grad:
            raise ContractError("loss does not depend on any tensor requiring grad")

        seed = np.ones_like(self.data)
        if self._node is None:
            self.grad = seed if self.grad is None else self.grad + seed
            return

        nodes = {}
        stack = [self]
        while stack:
            t = stack.pop()
            node = t._node
            if node is None:
                if t._spent:
                    raise TapeError("graph already consumed by a previous backward pass")
                continue
            if node.order in nodes:
                continue
            nodes[node.order] = (node, t)
            stack.extend(inp for inp in node.inputs if inp.requires_grad)

        pending = {id(self): seed}
        for order in sorted(nodes, reverse=True):
            node, out = nodes[order]
            g = pending.pop(id(out), None)
            out._node = None
            out._spent = True
            if g is None:
                continue
            out.grad = g
            in_grads = node.backward_fn(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._node is None:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                else:
                    key = id(inp)
                    pending[key] = gi if key not in pending else pending[key] + gi

    # -- operator sugar ------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def abs(self):
        return absolute(self)


def tensor(data: ArrayLike, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or np.float64))


def make_result(data: np.ndarray, inputs: Iterable[Tensor], backward_fn: Callable,
                op: str) -> Tensor:
    """Wrap ``data`` as an op output and record a node when needed."""
    inputs = tuple(inputs)
    out = Tensor(data)
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(op, inputs, backward_fn)
    return out


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        b = as_tensor(b, like=a)
    else:
        a = as_tensor(a, like=b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc
    return a, b


# -- elementwise -------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    """Elementwise quotient; any exact-zero divisor raises :class:`DomainError`."""
    a, b = _pair(a, b)
    if np.any(b.data == 0):
        raise DomainError("division by an exact-zero element")
    out = a.data / b.data

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward, "div")


def elementwise(kind: str, a, b) -> Tensor:
    try:
        fn = {"add": add, "sub": sub, "mul": mul, "div": div}[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(a, b)


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    if exponent < 1 and np.any(a.data == 0):
        raise DomainError("non-positive power of zero")
    out = a.data ** exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return make_result(out, (a,), backward, "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive element")
    return make_result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("sqrt gradient undefined at non-positive elements")
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def absolute(a: Tensor) -> Tensor:
    return make_result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def clip(a: Tensor, lo: Optional[float] = None, hi: Optional[float] = None) -> Tensor:
    """Clamp values; gradient is zero where a bound is active."""
    out = np.clip(a.data, lo, hi)
    passthrough = np.ones(a.shape, dtype=bool)
    if lo is not None:
        passthrough &= a.data >= lo
    if hi is not None:
        passthrough &= a.data <= hi
    return make_result(out, (a,), lambda g: (g * passthrough,), "clip")


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties send the gradient to ``a``."""
    a, b = _pair(a, b)
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)

    def backward(g):
        return unbroadcast(g * take_a, a.shape), unbroadcast(g * ~take_a, b.shape)

    return make_result(out, (a, b), backward, "minimum")


def maximum(a, b) -> Tensor:
    a, b = _pair(a, b)
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)

    def backward(g):
        return unbroadcast(g * take_a, a.shape), unbroadcast(g * ~take_a, b.shape)

    return make_result(out, (a, b), backward, "maximum")


# -- activations -------------------------------------------------------

def elu(x: Tensor) -> Tensor:
    neg_part = np.expm1(np.minimum(x.data, 0.0))
    out = np.where(x.data >= 0, x.data, neg_part)
    slope = np.where(x.data >= 0, 1.0, neg_part + 1.0)
    return make_result(out, (x,), lambda g: (g * slope,), "elu")


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # split on sign so exp never overflows
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def identity(x: Tensor) -> Tensor:
    return make_result(x.data.copy(), (x,), lambda g: (g,), "identity")


def activation(kind: str, x: Tensor) -> Tensor:
    try:
        fn = {"elu": elu, "sigmoid": sigmoid, "identity": identity}[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(x)


# -- reductions --------------------------------------------------------

def _norm_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    out = []
    for ax in axis:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(out), (x,), backward, "sum")


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise DomainError("mean over an empty extent")
    out = x.data.sum(axis=axes, keepdims=keepdims) / count

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_result(np.asarray(out), (x,), backward, "mean")


def reduce(kind: str, x: Tensor, axes=None) -> Tensor:
    if kind == "mean":
        return reduce_mean(x, axes)
    if kind == "sum":
        return reduce_sum(x, axes)
    raise ValueError(f"unknown reduction {kind!r}")


# -- shape manipulation ------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return make_result(out, (x,), lambda g: (g.transpose(inverse),), "transpose")


def getitem(x: Tensor, key) -> Tensor:
    """Basic (slice/integer) indexing."""
    out = x.data[key]

    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[key] = g
        return (full,)

    return make_result(np.array(out), (x,), backward, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ndim = tensors[0].ndim
    axis = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise DimensionError("concat shapes differ off the concat axis")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, tensors, backward, "concat")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shapes {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward, "matmul")
