"""Minimal reverse-mode automatic differentiation over numpy arrays.

The model's forward pass is written once against this module's ops and
runs in two modes: with plain ndarrays every op falls through to numpy
(no graph, no overhead beyond the call), and with ``Tensor`` leaves the
same code builds a computation graph whose ``backward`` accumulates
vector-Jacobian products.  Both modes execute the identical sequence of
numpy calls, so values agree bit for bit.

Only the operations the model graph needs are provided; this is not a
general-purpose autodiff system.
"""

from __future__ import annotations

import numpy as np


def _val(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` to undo numpy broadcasting."""
    g = np.asarray(g, dtype=np.float64)
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(
        i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1
    )
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(out_value, srcs):
    """Build a Tensor from (operand, grad_fn) pairs, or pass numpy through.

    ``grad_fn(g)`` maps the upstream gradient to the operand's gradient.
    Operands that are not Tensors are constants and contribute no parent.
    """
    parents = tuple(t for t, _ in srcs if isinstance(t, Tensor))
    if not parents:
        return out_value
    fns = tuple(fn for t, fn in srcs if isinstance(t, Tensor))

    def vjp(g):
        return [fn(g) for fn in fns]

    return Tensor(out_value, parents, vjp)


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, _parents=(), _vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.value.size != 1:
            raise ValueError("backward requires a scalar output")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        out = self.value[key]

        def grad_fn(g):
            buf = np.zeros_like(self.value)
            np.add.at(buf, key, g)
            return buf

        return Tensor(out, (self,), lambda g: [grad_fn(g)])

    @property
    def T(self):
        out = self.value.T
        return Tensor(out, (self,), lambda g: [np.asarray(g).T])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        orig = self.value.shape
        out = self.value.reshape(shape)
        return Tensor(out, (self,), lambda g: [np.asarray(g).reshape(orig)])

    def sum(self, axis=None, keepdims=False):
        out = self.value.sum(axis=axis, keepdims=keepdims)

        def grad_fn(g):
            g = np.asarray(g, dtype=np.float64)
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return np.broadcast_to(g, self.value.shape).copy()

        return Tensor(out, (self,), lambda g: [grad_fn(g)])

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.value.size
        else:
            count = self.value.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(count)


# -- binary / unary ops (dispatch on Tensor vs ndarray) ----------------


def add(a, b):
    av, bv = _val(a), _val(b)
    out = av + bv
    return _make(out, [
        (a, lambda g: _unbroadcast(g, av.shape)),
        (b, lambda g: _unbroadcast(g, bv.shape)),
    ])


def sub(a, b):
    av, bv = _val(a), _val(b)
    out = av - bv
    return _make(out, [
        (a, lambda g: _unbroadcast(g, av.shape)),
        (b, lambda g: _unbroadcast(-g, bv.shape)),
    ])


def neg(a):
    av = _val(a)
    return _make(-av, [(a, lambda g: -g)])


def mul(a, b):
    av, bv = _val(a), _val(b)
    out = av * bv
    return _make(out, [
        (a, lambda g: _unbroadcast(g * bv, av.shape)),
        (b, lambda g: _unbroadcast(g * av, bv.shape)),
    ])


def div(a, b):
    av, bv = _val(a), _val(b)
    out = av / bv
    return _make(out, [
        (a, lambda g: _unbroadcast(g / bv, av.shape)),
        (b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)),
    ])


def power(a, p):
    av = _val(a)
    p = float(p)
    out = av ** p
    return _make(out, [(a, lambda g: g * p * av ** (p - 1.0))])


def matmul(a, b):
    av, bv = _val(a), _val(b)
    out = av @ bv
    a_nd, b_nd = av.ndim, bv.ndim

    def grad_a(g):
        g = np.asarray(g, dtype=np.float64)
        if a_nd == 2 and b_nd == 2:
            return g @ bv.T
        if a_nd == 2 and b_nd == 1:
            return np.outer(g, bv)
        if a_nd == 1 and b_nd == 2:
            return bv @ g
        return g * bv

    def grad_b(g):
        g = np.asarray(g, dtype=np.float64)
        if a_nd == 2 and b_nd == 2:
            return av.T @ g
        if a_nd == 2 and b_nd == 1:
            return av.T @ g
        if a_nd == 1 and b_nd == 2:
            return np.outer(av, g)
        return g * av

    return _make(out, [(a, grad_a), (b, grad_b)])


def tanh(a):
    av = _val(a)
    out = np.tanh(av)
    return _make(out, [(a, lambda g: g * (1.0 - out * out))])


def cos(a):
    av = _val(a)
    out = np.cos(av)
    return _make(out, [(a, lambda g: -g * np.sin(av))])


def sin(a):
    av = _val(a)
    out = np.sin(av)
    return _make(out, [(a, lambda g: g * np.cos(av))])


def cos_sin(a):
    """cos and sin of the same argument, sharing work across passes."""
    av = _val(a)
    c = np.cos(av)
    s = np.sin(av)
    ct = _make(c, [(a, lambda g: -g * s)])
    st = _make(s, [(a, lambda g: g * c)])
    return ct, st


def exp(a):
    av = _val(a)
    out = np.exp(av)
    return _make(out, [(a, lambda g: g * out)])


def log(a):
    av = _val(a)
    out = np.log(av)
    return _make(out, [(a, lambda g: g / av)])


def sqrt(a):
    av = _val(a)
    out = np.sqrt(av)
    # callers keep arguments strictly positive; the floor only guards
    # against an exact zero producing inf
    return _make(out, [(a, lambda g: g * 0.5 / np.maximum(out, 1e-300))])


def clip_min(a, floor):
    av = _val(a)
    out = np.maximum(av, floor)
    return _make(out, [(a, lambda g: g * (av > floor))])


def clip_max(a, ceil):
    av = _val(a)
    out = np.minimum(av, ceil)
    return _make(out, [(a, lambda g: g * (av < ceil))])


def value(x) -> np.ndarray:
    """Underlying numpy value of a Tensor or array."""
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)
