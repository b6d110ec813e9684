"""Minimal reverse-mode differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray (or scalar) and remembers how it was made.
Ops accept plain numpy values anywhere a ``Tensor`` is allowed; plain
values are treated as constants and receive no gradient. ``backward``
walks the graph once and accumulates gradients into every reachable
``Tensor``. This covers exactly the loss shapes used by the learners
(MLP forwards, squashed-Gaussian log-probs, squared errors) and nothing
more exotic than that.

Backward closures pass ``fresh=True`` to the accumulator when the
incoming gradient is a newly allocated array that may be adopted without
copying; pass-through gradients (views, re-sent upstream buffers) must be
copied on first receipt to avoid aliasing.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor", "add", "sub", "mul", "div", "neg", "matmul", "relu", "tanh",
    "exp", "log", "square", "clip", "minimum", "narrow", "reshape",
    "concat", "sum_", "mean_", "backward", "value_of",
]


class Tensor:
    __slots__ = ("value", "grad", "parents", "_backward")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"


def value_of(x):
    """Raw numpy value of a Tensor or constant."""
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _accum(node, g, fresh=False):
    if node.grad is None:
        node.grad = g if fresh else np.array(g)
    else:
        node.grad += g


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting.

    Returns (array, fresh): reductions allocate, pass-throughs do not.
    """
    fresh = False
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
        fresh = True
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
            fresh = True
    return grad, fresh


def add(a, b):
    a_node, b_node = isinstance(a, Tensor), isinstance(b, Tensor)
    av = a.value if a_node else np.asarray(a, dtype=np.float64)
    bv = b.value if b_node else np.asarray(b, dtype=np.float64)
    parents = ((a, b) if b_node else (a,)) if a_node else (b,)
    out = Tensor(av + bv, parents)

    def bwd(g):
        if a_node:
            ga, fresh = _unbroadcast(g, av.shape)
            _accum(a, ga, fresh)
        if b_node:
            gb, fresh = _unbroadcast(g, bv.shape)
            _accum(b, gb, fresh)
    out._backward = bwd
    return out


def sub(a, b):
    return add(a, neg(b) if isinstance(b, Tensor) else -value_of(b))


def neg(a):
    out = Tensor(-a.value, (a,))
    out._backward = lambda g: _accum(a, -g, fresh=True)
    return out


def mul(a, b):
    a_node, b_node = isinstance(a, Tensor), isinstance(b, Tensor)
    av = a.value if a_node else np.asarray(a, dtype=np.float64)
    bv = b.value if b_node else np.asarray(b, dtype=np.float64)
    parents = ((a, b) if b_node else (a,)) if a_node else (b,)
    out = Tensor(av * bv, parents)

    def bwd(g):
        if a_node:
            ga, _ = _unbroadcast(g * bv, av.shape)
            _accum(a, ga, fresh=True)
        if b_node:
            gb, _ = _unbroadcast(g * av, bv.shape)
            _accum(b, gb, fresh=True)
    out._backward = bwd
    return out


def div(a, b):
    a_node, b_node = isinstance(a, Tensor), isinstance(b, Tensor)
    av = a.value if a_node else np.asarray(a, dtype=np.float64)
    bv = b.value if b_node else np.asarray(b, dtype=np.float64)
    parents = ((a, b) if b_node else (a,)) if a_node else (b,)
    out = Tensor(av / bv, parents)

    def bwd(g):
        if a_node:
            ga, _ = _unbroadcast(g / bv, av.shape)
            _accum(a, ga, fresh=True)
        if b_node:
            gb, _ = _unbroadcast(-g * av / (bv * bv), bv.shape)
            _accum(b, gb, fresh=True)
    out._backward = bwd
    return out


def matmul(a, b):
    a_node, b_node = isinstance(a, Tensor), isinstance(b, Tensor)
    av = a.value if a_node else np.asarray(a, dtype=np.float64)
    bv = b.value if b_node else np.asarray(b, dtype=np.float64)
    parents = ((a, b) if b_node else (a,)) if a_node else (b,)
    out = Tensor(av @ bv, parents)

    def bwd(g):
        if a_node:
            _accum(a, g @ bv.T, fresh=True)
        if b_node:
            _accum(b, av.T @ g, fresh=True)
    out._backward = bwd
    return out


def relu(a):
    mask = a.value > 0.0
    out = Tensor(a.value * mask, (a,))
    out._backward = lambda g: _accum(a, g * mask, fresh=True)
    return out


def tanh(a):
    t = np.tanh(a.value)
    out = Tensor(t, (a,))
    out._backward = lambda g: _accum(a, g * (1.0 - t * t), fresh=True)
    return out


def exp(a):
    e = np.exp(a.value)
    out = Tensor(e, (a,))
    out._backward = lambda g: _accum(a, g * e, fresh=True)
    return out


def log(a):
    out = Tensor(np.log(a.value), (a,))
    out._backward = lambda g: _accum(a, g / a.value, fresh=True)
    return out


def square(a):
    out = Tensor(a.value * a.value, (a,))
    out._backward = lambda g: _accum(a, g * (2.0 * a.value), fresh=True)
    return out


def clip(a, lo, hi):
    """Hard clamp; gradient is zero outside [lo, hi]."""
    mask = (a.value >= lo) & (a.value <= hi)
    out = Tensor(np.clip(a.value, lo, hi), (a,))
    out._backward = lambda g: _accum(a, g * mask, fresh=True)
    return out


def minimum(a, b):
    """Elementwise min; gradient routes to the smaller operand."""
    a_node, b_node = isinstance(a, Tensor), isinstance(b, Tensor)
    av = a.value if a_node else np.asarray(a, dtype=np.float64)
    bv = b.value if b_node else np.asarray(b, dtype=np.float64)
    take_a = av <= bv
    parents = ((a, b) if b_node else (a,)) if a_node else (b,)
    out = Tensor(np.where(take_a, av, bv), parents)

    def bwd(g):
        if a_node:
            ga, _ = _unbroadcast(g * take_a, av.shape)
            _accum(a, ga, fresh=True)
        if b_node:
            gb, _ = _unbroadcast(g * ~take_a, bv.shape)
            _accum(b, gb, fresh=True)
    out._backward = bwd
    return out


def narrow(a, start, stop):
    """Contiguous slice of a 1-D tensor."""
    out = Tensor(a.value[start:stop], (a,))

    def bwd(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        a.grad[start:stop] += g
    out._backward = bwd
    return out


def reshape(a, shape):
    out = Tensor(a.value.reshape(shape), (a,))
    out._backward = lambda g: _accum(a, g.reshape(a.value.shape), fresh=False)
    return out


def concat(a, b, axis=-1):
    av, bv = value_of(a), value_of(b)
    a_node, b_node = isinstance(a, Tensor), isinstance(b, Tensor)
    parents = ((a, b) if b_node else (a,)) if a_node else (b,)
    out = Tensor(np.concatenate([av, bv], axis=axis), parents)
    na = av.shape[axis]

    def bwd(g):
        ga, gb = np.split(g, [na], axis=axis)
        if a_node:
            _accum(a, ga, fresh=False)
        if b_node:
            _accum(b, gb, fresh=False)
    out._backward = bwd
    return out


def sum_(a, axis=None):
    out = Tensor(a.value.sum(axis=axis), (a,))

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.value.shape).copy(), fresh=True)
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis),
                                      a.value.shape).copy(), fresh=True)
    out._backward = bwd
    return out


def mean_(a, axis=None):
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum_(a, axis=axis), 1.0 / n)


def backward(loss):
    """Accumulate d(loss)/d(node) into ``grad`` of every reachable Tensor."""
    if loss.value.shape != ():
        raise ValueError("backward expects a scalar loss")
    topo, visited, stack = [], set(), [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.value)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
