"""A tape over the fixed layer set in :mod:`lfsal.functional`.

Only the handful of ops the networks need are differentiable here. A graph
is recorded only when some input has ``requires_grad``; inference passes run
on plain arrays with no caches held.
"""
from __future__ import annotations

import numpy as np

from . import functional as F
from .errors import DimensionError


class Var:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name=None, parents=(), backward=None):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(name={self.name!r}, shape={self.value.shape}, requires_grad={self.requires_grad})"


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x))


def _make(value, parents, backward):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Var(value, True, parents=parents, backward=backward)
    return Var(value)


def backward(root: Var, grad=None):
    """Accumulate ``d root / d leaf`` into every leaf's ``.grad``."""
    if grad is None:
        grad = np.ones_like(root.value)
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node._parents)
    root.grad = grad
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node._parents, grads):
            if g is None or not p.requires_grad:
                continue
            p.grad = g if p.grad is None else p.grad + g
        if node._parents:
            node.grad = None  # free intermediate gradients as we go


def conv2d(x: Var, w: Var, b: Var | None, spec: F.ConvLayerSpec) -> Var:
    out, cache = F.conv2d_forward(x.value, spec, w.value, None if b is None else b.value)
    if not (x.requires_grad or w.requires_grad or (b is not None and b.requires_grad)):
        return Var(out)

    def bw(g):
        dx, dw, db = F.conv2d_backward(g, cache, need_input_grad=x.requires_grad,
                                       need_weight_grad=w.requires_grad,
                                       need_bias_grad=b is not None and b.requires_grad)
        return (dx, dw) if b is None else (dx, dw, db)

    return _make(out, (x, w) if b is None else (x, w, b), bw)


def relu(x: Var) -> Var:
    out = F.relu(x.value)
    return _make(out, (x,), lambda g: (g * (out > 0),))


def sigmoid(x: Var) -> Var:
    out = F.sigmoid(x.value)
    return _make(out, (x,), lambda g: (g * out * (1 - out),))


def maxpool2x2(x: Var) -> Var:
    out, cache = F.maxpool2x2_forward(x.value)
    return _make(out, (x,), lambda g: (F.maxpool2x2_backward(g, cache),))


def resize_bilinear(x: Var, size) -> Var:
    if tuple(x.shape[-2:]) == tuple(size):
        return x
    out, cache = F.resize_bilinear_forward(x.value, size)
    return _make(out, (x,), lambda g: (F.resize_bilinear_backward(g, cache),))


def upsample(x: Var, factor: int) -> Var:
    H, W = x.shape[-2:]
    return resize_bilinear(x, (H * factor, W * factor))


def concat(xs: list[Var], axis: int = 1) -> Var:
    out = np.concatenate([x.value for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _make(out, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def mul(a: Var, b: Var) -> Var:
    """Broadcasting elementwise product."""
    out = a.value * b.value
    return _make(out, (a, b), lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def add(a: Var, b: Var) -> Var:
    out = a.value + b.value
    return _make(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def global_avg_pool(x: Var) -> Var:
    """``(N, C, H, W) -> (N, C)``."""
    N, C, H, W = x.shape
    out = x.value.mean(axis=(2, 3))
    return _make(out, (x,), lambda g: (np.broadcast_to(g[:, :, None, None] / (H * W), x.shape).copy(),))


def linear(x: Var, w: Var, b: Var) -> Var:
    """Affine map ``x @ w.T + b`` for ``x`` of shape ``(N, in)`` and ``w`` of ``(out, in)``."""
    if x.shape[-1] != w.shape[1]:
        raise DimensionError(f"linear input {x.shape} incompatible with weight {w.shape}")
    out = x.value @ w.value.T + b.value
    return _make(out, (x, w, b), lambda g: (g @ w.value, g.T @ x.value, g.sum(axis=0)))


def reshape(x: Var, shape) -> Var:
    out = x.value.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g
