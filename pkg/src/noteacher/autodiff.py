"""Reverse-mode automatic differentiation over float64 arrays.

A :class:`Value` wraps an ndarray together with a gradient buffer of the same
shape.  Every operation produces a new node that remembers its parents and a
closure mapping the output gradient onto parent gradients.  Node ids come from
a single monotone counter, so a node is always newer than its parents and
sorting the reachable nodes by descending id is a valid order for the reverse
sweep.  That id sequence is the tape.

Broadcasting follows NumPy, which covers the ``(batch, features)`` plus
``(features,)`` bias pattern and scalar constants.
"""
from __future__ import annotations

import itertools

import numpy as np

from . import kernels
from .errors import DomainError, ShapeError

# probabilities are clamped into [PROB_EPS, 1 - PROB_EPS] before any log
PROB_EPS = 1e-7

_node_ids = itertools.count()


class Value:
    """Differentiable node holding ``data`` and its accumulated ``grad``."""

    __slots__ = ("data", "grad", "id", "op", "requires_grad", "_parents", "_backward")
    # make ndarray (op) Value defer to the reflected Value method
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self.id = next(_node_ids)
        self.op = "leaf"
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.data)

    def detach(self):
        """Constant copy of this node, cut from the graph."""
        return Value(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Value(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)


def as_value(x):
    return x if isinstance(x, Value) else Value(x)


def _node(data, op, parents, backward):
    out = Value.__new__(Value)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = np.zeros_like(out.data)
    out.id = next(_node_ids)
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible operand shapes {a.shape} and {b.shape}") from None


# -- element-wise arithmetic ---------------------------------------------------


def add(a, b):
    a, b = as_value(a), as_value(b)
    _check_broadcast("add", a, b)
    return _node(
        a.data + b.data,
        "add",
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    a, b = as_value(a), as_value(b)
    _check_broadcast("sub", a, b)
    return _node(
        a.data - b.data,
        "sub",
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    a, b = as_value(a), as_value(b)
    _check_broadcast("mul", a, b)
    return _node(
        a.data * b.data,
        "mul",
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b):
    a, b = as_value(a), as_value(b)
    _check_broadcast("div", a, b)
    return _node(
        a.data / b.data,
        "div",
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a):
    a = as_value(a)
    return _node(-a.data, "neg", (a,), lambda g: (-g,))


def power(a, exponent):
    a = as_value(a)
    p = float(exponent)
    if p == 2.0:
        return _node(a.data * a.data, "square", (a,), lambda g: (2.0 * a.data * g,))
    return _node(a.data**p, "pow", (a,), lambda g: (p * a.data ** (p - 1.0) * g,))


def square(a):
    return power(a, 2)


def matmul(a, b):
    a, b = as_value(a), as_value(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible operand shapes {a.shape} and {b.shape}")
    return _node(a.data @ b.data, "matmul", (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a):
    a = as_value(a)
    return _node(a.data.T, "transpose", (a,), lambda g: (g.T,))


# -- non-linearities -------------------------------------------------------------


def relu(a):
    a = as_value(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def tanh(a):
    a = as_value(a)
    t = np.tanh(a.data)
    return _node(t, "tanh", (a,), lambda g: (g * (1.0 - t * t),))


def sigmoid(a):
    a = as_value(a)
    # tanh form is overflow-free and gives exactly 0.5 at 0
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(s, "sigmoid", (a,), lambda g: (g * s * (1.0 - s),))


def exp(a):
    a = as_value(a)
    e = np.exp(a.data)
    return _node(e, "exp", (a,), lambda g: (g * e,))


def log(a):
    a = as_value(a)
    if np.any(a.data <= 0) or np.any(np.isnan(a.data)):
        raise DomainError("log of a non-positive value; clamp probabilities first")
    return _node(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def clamp(a, lo, hi):
    a = as_value(a)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ValueError(f"clamp bounds must be finite with lo <= hi, got ({lo}, {hi})")
    mask = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), "clamp", (a,), lambda g: (g * mask,))


def clamp_prob(a):
    return clamp(a, PROB_EPS, 1.0 - PROB_EPS)


# -- reductions ------------------------------------------------------------------


def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims=False):  # noqa: A001
    a = as_value(a)
    return _node(
        a.data.sum(axis=axis, keepdims=keepdims),
        "sum",
        (a,),
        lambda g: (_expand(g, a.shape, axis, keepdims),),
    )


def mean(a, axis=None, keepdims=False):
    a = as_value(a)
    count = a.data.size if axis is None else a.shape[axis]
    if count == 0:
        raise ShapeError(f"mean over an empty axis of shape {a.shape}")
    return _node(
        a.data.mean(axis=axis, keepdims=keepdims),
        "mean",
        (a,),
        lambda g: (_expand(g, a.shape, axis, keepdims) / count,),
    )


def logsumexp(a, axis=-1, keepdims=False):
    """Overflow-safe ``log(sum(exp(a)))`` along ``axis``."""
    a = as_value(a)
    m = a.data.max(axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a.data - m)
    total = e.sum(axis=axis, keepdims=True)
    out = m + np.log(total)
    weights = e / total
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        g = g if keepdims else np.expand_dims(g, axis)
        return (g * weights,)

    return _node(out, "logsumexp", (a,), backward)


def softmax(a, axis=-1):
    a = as_value(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _node(s, "softmax", (a,), backward)


# -- indexing and structure --------------------------------------------------------


def take(a, index):
    a = as_value(a)
    if isinstance(index, np.ndarray) and index.dtype == bool:
        index = np.flatnonzero(index)

    def backward(g):
        gx = np.zeros_like(a.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _node(a.data[index], "take", (a,), backward)


def reshape(a, shape):
    a = as_value(a)
    return _node(a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(a.shape),))


def concat(values, axis=0):
    values = [as_value(v) for v in values]
    sizes = [v.shape[axis] for v in values]
    bounds = np.cumsum(sizes)[:-1]
    try:
        data = np.concatenate([v.data for v in values], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[v.shape for v in values]}") from None
    return _node(data, "concat", tuple(values), lambda g: tuple(np.split(g, bounds, axis=axis)))


def segment_max(a, offsets):
    """Max over contiguous row segments (one segment per bag).

    Gradient flows only into the arg-max row of each column; ties resolve to
    the lowest row index.
    """
    a = as_value(a)
    pooled, arg = kernels.segment_max(a.data, offsets)
    cols = np.broadcast_to(np.arange(a.shape[1]), arg.shape)

    def backward(g):
        gx = np.zeros_like(a.data)
        # segments are disjoint, so (arg, col) pairs never collide
        gx[arg, cols] = g
        return (gx,)

    return _node(pooled, "segment_max", (a,), backward)


# -- reverse sweep -----------------------------------------------------------------


def _sweep(root):
    if root.data.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    nodes = {}
    stack = [root]
    while stack:
        node = stack.pop()
        if node.id in nodes:
            continue
        nodes[node.id] = node
        stack.extend(p for p in node._parents if p.requires_grad and p.id not in nodes)
    pending = {root.id: np.ones_like(root.data)}
    done = {}
    for nid in sorted(nodes, reverse=True):
        g = pending.pop(nid, None)
        if g is None:
            continue
        node = nodes[nid]
        done[nid] = (node, g)
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = pending.get(parent.id)
            pending[parent.id] = pg if prev is None else prev + pg
    return done


def backward(root):
    """Accumulate d(root)/d(node) into ``grad`` of every reachable node."""
    for node, g in _sweep(root).values():
        node.grad += g


def gradients(root, wrt):
    """Return d(root)/d(w) for each ``w`` without touching any ``grad`` buffer."""
    done = _sweep(root)
    out = []
    for w in wrt:
        hit = done.get(w.id)
        out.append(np.array(hit[1], dtype=np.float64) if hit else np.zeros_like(w.data))
    return out
