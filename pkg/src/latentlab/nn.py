"""Minimal reverse-mode automatic differentiation over dense float64 arrays,
feed-forward networks, and an Adam optimizer.

The op surface is the smallest one the deep generative modules need: affine
layers, elementwise nonlinearities, reductions, log-softmax, column
gather/concat. A Tensor records its parents and a backward closure; calling
backward() on a scalar loss accumulates gradients into every reachable leaf
that has requires_grad set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Tensor", "Mlp", "AdamState", "forward", "backward", "adam_step",
           "concat", "zero_grad"]

ACTIVATIONS = ("tanh", "relu", "identity", "sigmoid", "softplus")


def _unbroadcast(grad, shape):
    """Reduce grad (shaped like the broadcast output) back to shape."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    """Dense array node on an implicit tape."""

    __slots__ = ("values", "grad", "parents", "_backward", "requires_grad",
                 "_backward_done")

    def __init__(self, values, parents=(), backward=None, requires_grad=False):
        self.values = np.asarray(values, dtype=float)
        self.grad = None
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in self.parents)
        self._backward_done = False

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def param(values):
        return Tensor(values, requires_grad=True)

    @staticmethod
    def const(values):
        return Tensor(values)

    @property
    def shape(self):
        return self.values.shape

    def item(self):
        return float(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # -- elementwise arithmetic ----------------------------------------------
    def _lift(self, other):
        return other if isinstance(other, Tensor) else Tensor(np.asarray(other, dtype=float))

    def __add__(self, other):
        other = self._lift(other)
        out = Tensor(self.values + other.values, (self, other))
        def bw(g):
            if self.requires_grad:
                _accum(self, _unbroadcast(g, self.values.shape))
            if other.requires_grad:
                _accum(other, _unbroadcast(g, other.values.shape))
        out._backward = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.values, (self,))
        out._backward = lambda g: _accum(self, -g) if self.requires_grad else None
        return out

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        out = Tensor(self.values * other.values, (self, other))
        def bw(g):
            if self.requires_grad:
                _accum(self, _unbroadcast(g * other.values, self.values.shape))
            if other.requires_grad:
                _accum(other, _unbroadcast(g * self.values, other.values.shape))
        out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        out = Tensor(self.values / other.values, (self, other))
        def bw(g):
            if self.requires_grad:
                _accum(self, _unbroadcast(g / other.values, self.values.shape))
            if other.requires_grad:
                _accum(other, _unbroadcast(-g * self.values / other.values**2,
                                           other.values.shape))
        out._backward = bw
        return out

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __matmul__(self, other):
        other = self._lift(other)
        a, b = self.values, other.values
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")
        out = Tensor(a @ b, (self, other))
        def bw(g):
            if self.requires_grad:
                _accum(self, g @ b.T)
            if other.requires_grad:
                _accum(other, a.T @ g)
        out._backward = bw
        return out

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only constant powers are supported")
        out = Tensor(self.values ** p, (self,))
        def bw(g):
            if self.requires_grad:
                _accum(self, g * p * self.values ** (p - 1))
        out._backward = bw
        return out

    def __getitem__(self, key):
        out = Tensor(self.values[key], (self,))
        def bw(g):
            if self.requires_grad:
                full = np.zeros_like(self.values)
                np.add.at(full, key, g)
                _accum(self, full)
        out._backward = bw
        return out

    # -- elementwise functions -------------------------------------------------
    def exp(self):
        vals = np.exp(self.values)
        out = Tensor(vals, (self,))
        out._backward = (lambda g: _accum(self, g * vals)) if self.requires_grad else None
        return out

    def log(self):
        out = Tensor(np.log(self.values), (self,))
        out._backward = (lambda g: _accum(self, g / self.values)) if self.requires_grad else None
        return out

    def tanh(self):
        vals = np.tanh(self.values)
        out = Tensor(vals, (self,))
        out._backward = (lambda g: _accum(self, g * (1.0 - vals * vals))) if self.requires_grad else None
        return out

    def relu(self):
        vals = np.maximum(self.values, 0.0)
        out = Tensor(vals, (self,))
        out._backward = (lambda g: _accum(self, g * (self.values > 0))) if self.requires_grad else None
        return out

    def sigmoid(self):
        vals = np.where(self.values >= 0,
                        1.0 / (1.0 + np.exp(-np.abs(self.values))),
                        np.exp(-np.abs(self.values)) / (1.0 + np.exp(-np.abs(self.values))))
        out = Tensor(vals, (self,))
        out._backward = (lambda g: _accum(self, g * vals * (1.0 - vals))) if self.requires_grad else None
        return out

    def softplus(self):
        vals = np.logaddexp(0.0, self.values)
        out = Tensor(vals, (self,))
        if self.requires_grad:
            sig = np.where(self.values >= 0,
                           1.0 / (1.0 + np.exp(-np.abs(self.values))),
                           np.exp(-np.abs(self.values)) / (1.0 + np.exp(-np.abs(self.values))))
            out._backward = lambda g: _accum(self, g * sig)
        return out

    def abs(self):
        out = Tensor(np.abs(self.values), (self,))
        out._backward = (lambda g: _accum(self, g * np.sign(self.values))) if self.requires_grad else None
        return out

    def clip(self, lo, hi):
        """Clamp values; gradient passes only where unclamped."""
        vals = np.clip(self.values, lo, hi)
        out = Tensor(vals, (self,))
        if self.requires_grad:
            mask = (self.values > lo) & (self.values < hi)
            out._backward = lambda g: _accum(self, g * mask)
        return out

    # -- reductions -------------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.values.sum(axis=axis, keepdims=keepdims), (self,))
        if self.requires_grad:
            def bw(g):
                gg = np.asarray(g)
                if axis is not None and not keepdims:
                    gg = np.expand_dims(gg, axis)
                _accum(self, np.broadcast_to(gg, self.values.shape).copy())
            out._backward = bw
        return out

    def mean(self, axis=None, keepdims=False):
        n = self.values.size if axis is None else self.values.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def log_softmax(self, axis=-1):
        m = self.values.max(axis=axis, keepdims=True)
        shifted = self.values - m
        lse = m + np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
        vals = self.values - lse
        out = Tensor(vals, (self,))
        if self.requires_grad:
            soft = np.exp(vals)
            out._backward = lambda g: _accum(self, g - soft * g.sum(axis=axis, keepdims=True))
        return out

    def reshape(self, *shape):
        out = Tensor(self.values.reshape(*shape), (self,))
        out._backward = (lambda g: _accum(self, g.reshape(self.values.shape))) if self.requires_grad else None
        return out

    def take_columns(self, idx):
        """Gather columns of a 2-D tensor by integer index array."""
        idx = np.asarray(idx, dtype=int)
        out = Tensor(self.values[:, idx], (self,))
        if self.requires_grad:
            def bw(g):
                full = np.zeros_like(self.values)
                np.add.at(full.T, idx, g.T)
                _accum(self, full)
            out._backward = bw
        return out


def _accum(t, g):
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def concat(tensors, axis=0):
    vals = np.concatenate([t.values for t in tensors], axis=axis)
    out = Tensor(vals, tuple(tensors))
    sizes = [t.values.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, g[tuple(sl)])
    out._backward = bw
    return out


def backward(loss):
    """Populate grads of every tape leaf reachable from the scalar loss."""
    if loss.values.size != 1:
        raise ValueError("backward requires a scalar loss")
    if loss._backward_done:
        raise RuntimeError("backward already called on this loss; rebuild the graph")
    loss._backward_done = True
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    loss.grad = np.ones_like(loss.values)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grad(params):
    for p in params:
        p.grad = None


@dataclass
class Mlp:
    """Fully connected network: weights[i] (d_i, d_{i+1}), biases[i] (d_{i+1},),
    one activation name per layer."""

    weights: list
    biases: list
    activations: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) != len(self.activations):
            raise ValueError("weights, biases, activations must align")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for i in range(len(self.weights) - 1):
            if self.weights[i].shape[1] != self.weights[i + 1].shape[0]:
                raise ValueError("consecutive layer dims are incompatible")

    @classmethod
    def create(cls, dims, activations, rng):
        """Glorot-uniform weights, zero biases; deterministic given rng."""
        if len(activations) != len(dims) - 1:
            raise ValueError("need one activation per layer")
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            W = bound * (2.0 * rng.uniform((fan_in, fan_out)) - 1.0)
            weights.append(Tensor.param(W))
            biases.append(Tensor.param(np.zeros(fan_out)))
        return cls(weights, biases, list(activations))

    @property
    def in_dim(self):
        return self.weights[0].shape[0]

    @property
    def out_dim(self):
        return self.weights[-1].shape[1]

    def params(self):
        return list(self.weights) + list(self.biases)

    def forward(self, x):
        """Apply the layer stack to a (batch, in_dim) tensor."""
        if not isinstance(x, Tensor):
            x = Tensor(np.atleast_2d(np.asarray(x, dtype=float)))
        if x.values.ndim != 2 or x.values.shape[1] != self.in_dim:
            raise ValueError(f"input shape {x.values.shape} does not match in_dim {self.in_dim}")
        h = x
        for W, b, act in zip(self.weights, self.biases, self.activations):
            h = h @ W + b
            if act == "tanh":
                h = h.tanh()
            elif act == "relu":
                h = h.relu()
            elif act == "sigmoid":
                h = h.sigmoid()
            elif act == "softplus":
                h = h.softplus()
        return h


def forward(mlp, x):
    """Functional alias for Mlp.forward."""
    return mlp.forward(x)


@dataclass
class AdamState:
    """First/second moment accumulators; t counts completed steps."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0


def adam_step(params, grads, state, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on params; returns state."""
    if not state.m:
        state.m = [np.zeros_like(p.values) for p in params]
        state.v = [np.zeros_like(p.values) for p in params]
    state.t += 1
    t = state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p.values = p.values - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state
