"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every forward operation that touches a tensor requiring gradients records
its parents and a closure that maps the output gradient to parent
gradients. ``Tensor.backward`` orders the recorded graph topologically and
replays the closures in reverse.
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "DimensionError",
    "ContractError",
    "no_grad",
    "is_grad_enabled",
    "as_tensor",
    "tanh",
    "sigmoid",
    "relu",
    "absolute",
    "add",
    "sub",
    "mul",
    "scale",
    "elementwise",
    "total",
    "mean",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "dropout",
    "mask",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class ContractError(ValueError):
    """Raised when a precondition other than a shape check is violated."""


_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """N-dimensional float64 array that can take part in a recorded graph.

    ``grad`` is a same-shape buffer allocated iff ``requires_grad``; it
    accumulates across ``backward`` calls until ``zero_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        track = is_grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        if track:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- reverse pass --------------------------------------------------------
    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self.data.ndim != 0:
            raise ContractError(f"backward needs a 0-d loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones((), dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = node.grad + g if node.grad is not None else g.copy()
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(other, self)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise ContractError("tensor division is only defined for scalar divisors")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, idx):
        return index(self, idx)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise ---------------------------------------------------------------
def add(a, b) -> Tensor:
    if np.isscalar(a):
        a, b = b, a
    if np.isscalar(b):
        a = as_tensor(a)
        return Tensor._result(a.data + float(b), (a,), lambda g: (g,))
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return Tensor._result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    if np.isscalar(a):
        return add(scale(as_tensor(b), -1.0), float(a))
    if np.isscalar(b):
        return add(a, -float(b))
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return Tensor._result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    return Tensor._result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return Tensor._result(a.data * c, (a,), lambda g: (g * c,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return Tensor._result(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split evaluation avoids exp overflow for large |x|
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return Tensor._result(y, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    keep = a.data > 0
    return Tensor._result(np.where(keep, a.data, 0.0), (a,), lambda g: (g * keep,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return Tensor._result(np.abs(a.data), (a,), lambda g: (g * sign,))


_UNARY = {"tanh": tanh, "sigmoid": sigmoid, "relu": relu, "abs": absolute}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name: tanh | sigmoid | relu | abs | add | sub | mul | scale."""
    if op in _UNARY:
        (x,) = args
        return _UNARY[op](x)
    if op in _BINARY:
        x, y = args
        return _BINARY[op](x, y)
    if op == "scale":
        x, c = args
        return scale(x, c)
    raise ContractError(f"unknown elementwise op {op!r}")


# -- reductions and reshaping --------------------------------------------------
def total(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return Tensor._result(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    shape, n = a.shape, a.size
    return Tensor._result(
        np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),)
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    return Tensor._result(
        a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g)
    )


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError("transpose expects a 2-d tensor")
    return Tensor._result(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a, shape: Iterable[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return Tensor._result(a.data.reshape(tuple(shape)), (a,), lambda g: (g.reshape(old),))


def index(a, idx) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor._result(np.array(a.data[idx]), (a,), back)


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._result(np.concatenate([p.data for p in parts], axis=axis), parts, back)


def mask(a, keep: np.ndarray) -> Tensor:
    """Multiply by a constant 0/1 mask; gradient flows through kept entries only."""
    a = as_tensor(a)
    keep = np.asarray(keep, dtype=np.float64)
    if keep.shape != a.shape:
        raise DimensionError(f"mask: shape mismatch {a.shape} vs {keep.shape}")
    return Tensor._result(a.data * keep, (a,), lambda g: (g * keep,))


def dropout(a, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    if rate >= 1.0:
        raise ContractError("dropout rate must be < 1")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return Tensor._result(a.data * keep, (a,), lambda g: (g * keep,))
