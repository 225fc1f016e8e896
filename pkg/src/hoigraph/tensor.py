"""Small dense tensor engine with tape-ordered reverse-mode autodiff.

Values live in numpy arrays (row-major). Every differentiable primitive
records its parents and a backward closure; ``backward`` replays the
recorded nodes in reverse creation order.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_ids = itertools.count()

# backward faults injected by tests / `hoigraph gradcheck --inject-bug`
_FAULTY_OPS: set[str] = set()

DEFAULT_DTYPE = np.float64


class ContractError(ValueError):
    """Raised when an operation is called outside its contract."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or (data.dtype if isinstance(data, np.ndarray)
                                             and data.dtype.kind == "f" else DEFAULT_DTYPE))
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._id = next(_ids)

    # construction helpers -------------------------------------------------
    @classmethod
    def _make(cls, data: np.ndarray, parents: tuple[Tensor, ...], op: str, backward) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.op = op
        out._id = next(_ids)
        out.grad = None
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division by a tensor is not a primitive")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def log(self):
        return log(self)

    def softmax(self, axis: int = -1):
        return softmax(self, axis)

    def log_softmax(self, axis: int = -1):
        return log_softmax(self, axis)

    def backward(self) -> None:
        backward(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# primitives -----------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    sa, sb = a.shape, b.shape
    return Tensor._make(a.data + b.data, (a, b), "add",
                        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return Tensor._make(-a.data, (a,), "neg", lambda g: (-g,))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    ad, bd = a.data, b.data
    return Tensor._make(ad * bd, (a, b), "mul",
                        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; both operands need ``ndim >= 2``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(ad @ bd, (a, b), "matmul", back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of nothing")
    ax = axis % tensors[0].ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=ax),
                        tuple(tensors), "concat", back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("stack of nothing")
    ax = axis % (tensors[0].ndim + 1)
    return Tensor._make(np.stack([t.data for t in tensors], axis=ax), tuple(tensors), "stack",
                        lambda g: [np.take(g, i, axis=ax) for i in range(len(tensors))])


def take(a: Tensor, idx) -> Tensor:
    """Basic or integer-array indexing (``a[idx]``)."""
    shape, dtype = a.shape, a.dtype
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(p, (int, slice, type(None), type(Ellipsis))) for p in parts)

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(a.data[idx], (a,), "slice", back)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(old),))


def swapaxes(a: Tensor, x: int, y: int) -> Tensor:
    return Tensor._make(np.swapaxes(a.data, x, y), (a,), "swapaxes",
                        lambda g: (np.swapaxes(g, x, y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return Tensor._make(y, (a,), "tanh", lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split form avoids exp overflow for large |x|
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    return Tensor._make(y, (a,), "sigmoid", lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._make(np.where(mask, a.data, 0.0).astype(a.dtype, copy=False), (a,), "relu",
                        lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return Tensor._make(y, (a,), "exp", lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise ContractError("log of a non-positive value")
    return Tensor._make(np.log(x), (a,), "log", lambda g: (g / x,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    if x.shape[axis] == 0:
        raise ContractError("softmax over an empty axis")
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    return Tensor._make(y, (a,), "softmax",
                        lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    if x.shape[axis] == 0:
        raise ContractError("log_softmax over an empty axis")
    z = x - x.max(axis=axis, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    p = np.exp(y)
    return Tensor._make(y, (a,), "log_softmax",
                        lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), "sum", back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / float(n))


# reverse pass -----------------------------------------------------------------

def _reachable(root: Tensor) -> list[Tensor]:
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack_ = [root]
    while stack_:
        t = stack_.pop()
        if t._id in seen or not t.requires_grad:
            continue
        seen.add(t._id)
        nodes.append(t)
        stack_.extend(t._parents)
    # creation order is the tape order
    nodes.sort(key=lambda t: t._id, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {loss._id: np.ones_like(loss.data)}
    for node in _reachable(loss):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = node.grad + g if node.grad is not None else g.copy()
            continue
        parent_grads = node._backward(g)
        if node.op in _FAULTY_OPS:
            parent_grads = [None if pg is None else 1.5 * pg for pg in parent_grads]
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if p._id in grads:
                grads[p._id] = grads[p._id] + pg
            else:
                grads[p._id] = pg


@contextlib.contextmanager
def inject_backward_fault(*ops: str):
    """Corrupt the backward rule of the named primitives (negative control)."""
    _FAULTY_OPS.update(ops)
    try:
        yield
    finally:
        _FAULTY_OPS.difference_update(ops)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
