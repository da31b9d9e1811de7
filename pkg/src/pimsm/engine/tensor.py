"""Array-valued reverse-mode autodiff.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure computing the vector-Jacobian product. :func:`backward` sorts the
graph topologically and replays the closures once each, accumulating into
``.grad`` of every node that requires a gradient.

Recurrences are not special-cased: a scan is simply unrolled into many small
nodes on the same graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import ContractError

DEFAULT_DTYPE = np.float64


def _as_array(x, dtype=None) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x if dtype is None or x.dtype == dtype else x.astype(dtype)
    return np.asarray(x, dtype=dtype or DEFAULT_DTYPE)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    nlead = grad.ndim - len(shape)
    if nlead > 0:
        grad = grad.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    # make numpy scalars/arrays defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True).reshape(self.data.shape)
        else:
            self.grad += g

    def _grad_buffer(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def _raise_item(t):
    raise ContractError(f"item() needs a single-element tensor, got shape {t.shape}")


def Parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=DEFAULT_DTYPE, copy=True), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    req = any(p.requires_grad for p in parents)
    if not req:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: a._accum(-g))


def power(a, p: float) -> Tensor:
    """``a ** p`` for a constant exponent."""
    a = as_tensor(a)
    p = float(p)
    out = a.data ** p

    def bw(g):
        a._accum(g * p * a.data ** (p - 1.0))

    return _make(out, (a,), bw)


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data >= b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(np.where(pick_a, g, 0.0), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return _make(np.where(pick_a, a.data, b.data), (a, b), bw)


def minimum(a, b) -> Tensor:
    return neg(maximum(neg(a), neg(b)))


def where(mask, a, b) -> Tensor:
    """Select ``a`` where the constant boolean ``mask`` holds, else ``b``."""
    mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=bool)
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(np.where(mask, g, 0.0), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.where(mask, 0.0, g), b.shape))

    return _make(np.where(mask, a.data, b.data), (a, b), bw)


def clip(a, lo=None, hi=None) -> Tensor:
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    return _make(out, (a,), lambda g: a._accum(np.where(inside, g, 0.0)))


# -- elementwise unary -------------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: a._accum(g * out))


def expm1(a) -> Tensor:
    a = as_tensor(a)
    out = np.expm1(a.data)
    return _make(out, (a,), lambda g: a._accum(g * (out + 1.0)))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: a._accum(g / a.data))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: a._accum(g * 0.5 / out))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: a._accum(2.0 * g * a.data))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: a._accum(g * np.sign(a.data)))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: a._accum(g * (1.0 - out * out)))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _np_sigmoid(a.data)
    return _make(out, (a,), lambda g: a._accum(g * out * (1.0 - out)))


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    return _make(out, (a,), lambda g: a._accum(g * _np_sigmoid(a.data)))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0.0), (a,), lambda g: a._accum(np.where(pos, g, 0.0)))


def silu(a) -> Tensor:
    a = as_tensor(a)
    s = _np_sigmoid(a.data)
    out = a.data * s
    return _make(out, (a,), lambda g: a._accum(g * (s + a.data * s * (1.0 - s))))


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    # two-sided form avoids exp overflow
    out = np.empty_like(x, dtype=DEFAULT_DTYPE if x.dtype.kind != "f" else x.dtype)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- linear algebra ----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractError("matmul expects operands with ndim >= 2")
    if b.ndim == 2 and a.ndim > 2:
        # stacked rows times one matrix: flatten to a single GEMM both ways
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])

        def bw_flat(g):
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                a._accum((g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                b._accum(a2.T @ g2)

        return _make((a2 @ b.data).reshape(*lead, b.shape[-1]), (a, b), bw_flat)

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), bw)


# -- reductions --------------------------------------------------------------

def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return _make(out, (a,), lambda g: a._accum(_expand_reduced(g, a.shape, axis, keepdims)))


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size / max(out.size, 1)
    return _make(out, (a,), lambda g: a._accum(_expand_reduced(g, a.shape, axis, keepdims) / n))


def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.log(s) + m
    soft = e / s
    out_r = out if keepdims else np.squeeze(out, axis=axis)

    def bw(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        a._accum(gg * soft)

    return _make(out_r, (a,), bw)


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        a._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, (a,), bw)


def log_softmax(a, axis=-1) -> Tensor:
    return sub(a, logsumexp(a, axis=axis, keepdims=True))


def cumsum(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    out = np.cumsum(a.data, axis=axis)

    def bw(g):
        a._accum(np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis))

    return _make(out, (a,), bw)


# -- shape manipulation ------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.shape)))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = None if axes is None else tuple(axes)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(out, (a,), lambda g: a._accum(np.transpose(g, inv)))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, i, j), (a,), lambda g: a._accum(np.swapaxes(g, i, j)))


def expand_dims(a, axis) -> Tensor:
    a = as_tensor(a)
    return reshape(a, np.expand_dims(a.data, axis).shape)


def getitem(a, idx) -> Tensor:
    """Indexing/slicing. Basic slices scatter back in place; fancy indices use ``np.add.at``."""
    a = as_tensor(a)
    if isinstance(idx, Tensor):
        idx = idx.data
    out = a.data[idx]
    fancy = _is_fancy(idx)

    def bw(g):
        buf = a._grad_buffer()
        if fancy:
            np.add.at(buf, idx, g)
        else:
            buf[idx] += g

    return _make(np.array(out, copy=True), (a,), bw)


def _is_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def take_along_axis(a, indices: np.ndarray, axis: int) -> Tensor:
    a = as_tensor(a)
    indices = np.asarray(indices)
    out = np.take_along_axis(a.data, indices, axis=axis)

    def bw(g):
        buf = a._grad_buffer()
        # put_along_axis overwrites duplicates; accumulate through a zero canvas instead
        canvas = np.zeros_like(buf)
        idx_full = _full_index(indices, axis, a.shape)
        np.add.at(canvas, idx_full, g)
        buf += canvas

    return _make(out, (a,), bw)


def _full_index(indices, axis, shape):
    axis = axis % len(shape)
    grids = list(np.indices(indices.shape, sparse=True))
    grids[axis] = indices
    return tuple(grids)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def bw(g):
        for i, t in enumerate(ts):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=axis))

    return _make(out, ts, bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def bw(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return _make(out, ts, bw)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    out = np.broadcast_to(a.data, shape)
    return _make(np.array(out), (a,), lambda g: a._accum(_unbroadcast(g, a.shape)))


# -- graph traversal ---------------------------------------------------------

@dataclass
class Tape:
    """The recorded graph below one scalar output, in topological order."""

    output: Tensor
    nodes: list = field(default_factory=list)

    @classmethod
    def from_output(cls, output: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack_: list[tuple[Tensor, bool]] = [(output, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack_.append((p, False))
        return cls(output=output, nodes=order)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if not n._parents]


def backward(loss: Tensor, retain_graph: bool = False) -> Tape:
    """Reverse-mode sweep from a scalar ``loss``.

    Leaf tensors end up with ``.grad`` filled; interior gradients are freed
    unless ``retain_graph`` is set.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    tape = Tape.from_output(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            if not retain_graph:
                node.grad = None
    if not retain_graph:
        for node in tape.nodes:
            if node._parents:
                node._parents = ()
                node._backward = None
    return tape


def grad(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` w.r.t. ``params``; zeros where disconnected."""
    params = list(params)
    for p in params:
        p.grad = None
    backward(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
