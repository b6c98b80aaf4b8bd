"""Dense NCHW tensors with reverse-mode automatic differentiation.

Every value flowing through the network is a 4-d array laid out as
(batch, channels, height, width). A scalar is stored as shape (1, 1, 1, 1).
Operations record their parents and a backward closure on the output tensor;
:func:`backward` replays those closures in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "NonFiniteError",
    "backward",
    "no_grad",
    "is_grad_enabled",
    "default_dtype",
    "set_default_dtype",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "hadamard",
    "tensor_sum",
    "tensor_mean",
]

SCALAR_SHAPE = (1, 1, 1, 1)

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible with an operation.

    The message always names the offending axis.
    """

    def __init__(self, op: str, axis: str, expected, got):
        self.op = op
        self.axis = axis
        self.expected = expected
        self.got = got
        super().__init__(f"{op}: axis {axis!r} expected {expected}, got {got}")


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf is detected in a tensor."""


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise TypeError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """A 4-d float array that can participate in an autodiff graph.

    Args:
        data: array-like with exactly four dimensions (scalars and
            1-d vectors are not promoted implicitly; use :func:`as_tensor`).
        requires_grad: whether gradients should be accumulated into ``grad``.
        name: optional label used by checkpoints and error messages.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 _parents: Tuple["Tensor", ...] = (), _backward: Optional[BackwardFn] = None):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(_DEFAULT_DTYPE)
        if arr.ndim != 4:
            raise DimensionError("Tensor", "rank", 4, arr.ndim)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError("item", "size", 1, self.data.size)
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self) -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values in tensor {self.name or ''} {self.shape}")
        return self

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other, like=self), self)

    def __neg__(self):
        return neg(self)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_mean(self)


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    """Wrap ``value`` as a constant tensor, promoting Python scalars to (1,1,1,1).

    Float arrays keep their dtype unless ``like`` is given.
    """
    if isinstance(value, Tensor):
        return value
    if like is not None:
        dtype = like.dtype
    elif isinstance(value, np.ndarray) and value.dtype.kind == "f":
        dtype = value.dtype
    else:
        dtype = _DEFAULT_DTYPE
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(SCALAR_SHAPE)
    return Tensor(arr)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Build an op output, recording the graph edge only when needed."""
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if needs:
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn)
    return Tensor(data)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over axes that were broadcast up from ``shape``."""
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    names = "NCHW"
    for i, (x, y) in enumerate(zip(a.shape, b.shape)):
        if x != y and x != 1 and y != 1:
            raise DimensionError(op, names[i], x, y)


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("add", a, b)

    def _bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), _bw)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("sub", a, b)

    def _bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), _bw)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("mul", a, b)

    def _bw(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_result(a.data * b.data, (a, b), _bw)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast("div", a, b)
    out = a.data / b.data

    def _bw(g):
        ga = g / b.data
        return unbroadcast(ga, a.shape), unbroadcast(-ga * out, b.shape)

    return make_result(out, (a, b), _bw)


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product where ``b`` matches ``a`` or is an (N, C, 1, 1) gate."""
    if b.shape != a.shape:
        n, c = a.shape[:2]
        if b.shape != (n, c, 1, 1):
            axis = "N" if b.shape[0] != n else "C" if b.shape[1] != c else "HW"
            raise DimensionError("hadamard", axis, a.shape, b.shape)
    return mul(a, b)


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.shape

    def _bw(g):
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(a.data.sum(dtype=a.dtype).reshape(SCALAR_SHAPE), (a,), _bw)


def tensor_mean(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size

    def _bw(g):
        return (np.full(shape, g.reshape(()) / n, dtype=g.dtype),)

    return make_result((a.data.sum(dtype=a.dtype) / n).reshape(SCALAR_SHAPE), (a,), _bw)


def _pair(a, b) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# -- reverse pass -------------------------------------------------------------

def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, check_finite: bool = True) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf.

    ``loss`` must be scalar-shaped. Leaf gradients are added to any existing
    ``grad``; clear them between steps with :meth:`Tensor.zero_grad`.
    """
    if loss.shape != SCALAR_SHAPE:
        raise DimensionError("backward", "shape", SCALAR_SHAPE, loss.shape)
    if not loss.requires_grad:
        raise ValueError("backward: loss is not attached to a graph")
    if check_finite:
        loss.check_finite()
    grads = {id(loss): np.ones(SCALAR_SHAPE, dtype=loss.dtype)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
