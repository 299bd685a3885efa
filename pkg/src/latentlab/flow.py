"""Normalizing flows: exact densities via the change of variables, with
planar layers, affine coupling layers, and fixed permutations.

The generator direction z -> x is "forward"; log-density bookkeeping is
available in both directions and must agree up to sign. Coupling and
permutation layers invert analytically (and differentiably); planar layers
invert by scalar root-finding, so flows containing planar layers support
evaluation and inversion but not gradient-based likelihood training.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import AdamState, Mlp, Tensor, adam_step, backward, concat, zero_grad

__all__ = ["PlanarLayer", "CouplingLayer", "PermutationLayer", "FlowModel",
           "forward_with_logdet", "inverse", "log_likelihood", "fit",
           "sample", "make_coupling_stack"]

S_CLAMP = 5.0
PLANAR_ROOT_MAX_ITERS = 100
PLANAR_ROOT_TOL = 1e-12


@dataclass
class PlanarLayer:
    """Residual perturbation z + u_hat * tanh(w.z + b).

    u is reparameterized as u_hat = u + (m(w.u) - w.u) * w / |w|^2 with
    m(a) = -1 + softplus(a), which forces w.u_hat > -1 and hence global
    invertibility.
    """

    u: Tensor
    w: Tensor
    b: Tensor

    @classmethod
    def create(cls, dim, rng):
        scale = 0.1
        return cls(Tensor.param(scale * rng.standard_normal(dim)),
                   Tensor.param(scale * rng.standard_normal(dim)),
                   Tensor.param(np.zeros(1)))

    @property
    def dim(self):
        return self.u.values.shape[0]

    def params(self):
        return [self.u, self.w, self.b]

    def _u_hat(self):
        wu = (self.w * self.u).sum()
        m = (-1.0) + wu.softplus()
        wnorm2 = (self.w * self.w).sum()
        return self.u + (m - wu) / wnorm2 * self.w

    def _u_hat_np(self):
        w, u = self.w.values, self.u.values
        wu = float(w @ u)
        m = -1.0 + math.log1p(math.exp(-abs(wu))) + max(wu, 0.0)
        return u + (m - wu) * w / float(w @ w)

    def forward(self, z):
        u_hat = self._u_hat()
        w_col = self.w.reshape(-1, 1)
        pre = z @ w_col + self.b                      # (N, 1)
        t = pre.tanh()
        out = z + t @ u_hat.reshape(1, -1)
        wu_hat = (self.w * u_hat).sum()
        logdet = (1.0 + (1.0 - t * t) * wu_hat).abs().log().sum(axis=1)
        return out, logdet

    def inverse(self, x):
        """Solve the scalar pre-activation per row, then subtract the bump."""
        u_hat = self._u_hat_np()
        w = self.w.values
        b = float(self.b.values[0])
        wu = float(w @ u_hat)
        X = np.atleast_2d(x)
        targets = X @ w
        z = np.empty_like(X)
        for i, target in enumerate(targets):
            alpha = _solve_planar_pre(target, wu, b)
            z[i] = X[i] - u_hat * math.tanh(alpha + b)
        return z


def _solve_planar_pre(target, wu, b):
    """Root of g(a) = a + wu * tanh(a + b) - target; g is strictly increasing
    because wu > -1."""
    lo = target - abs(wu) - 1.0
    hi = target + abs(wu) + 1.0
    a = 0.5 * (lo + hi)
    for _ in range(PLANAR_ROOT_MAX_ITERS):
        t = math.tanh(a + b)
        g = a + wu * t - target
        if abs(g) < PLANAR_ROOT_TOL:
            return a
        if g > 0:
            hi = a
        else:
            lo = a
        gp = 1.0 + wu * (1.0 - t * t)
        a_newton = a - g / gp
        a = a_newton if lo < a_newton < hi else 0.5 * (lo + hi)
    t = math.tanh(a + b)
    if abs(a + wu * t - target) > 1e-8:
        raise RuntimeError("planar inversion did not converge")
    return a


@dataclass
class CouplingLayer:
    """Affine coupling: the b-half is scaled and shifted by networks of the
    a-half; the a-half passes through unchanged. s outputs are smoothly
    clamped to |s| <= 5 to keep exp(s) bounded."""

    idx_a: np.ndarray
    idx_b: np.ndarray
    s_net: Mlp
    t_net: Mlp

    @classmethod
    def create(cls, dim, rng, hidden=32, flip=False):
        half = dim // 2
        idx = np.arange(dim)
        idx_a, idx_b = (idx[half:], idx[:half]) if flip else (idx[:half], idx[half:])
        s_net = Mlp.create([len(idx_a), hidden, len(idx_b)], ["tanh", "identity"], rng.split(1))
        t_net = Mlp.create([len(idx_a), hidden, len(idx_b)], ["tanh", "identity"], rng.split(2))
        return cls(idx_a, idx_b, s_net, t_net)

    def __post_init__(self):
        union = np.sort(np.concatenate([self.idx_a, self.idx_b]))
        if not np.array_equal(union, np.arange(union.size)):
            raise ValueError("coupling mask must partition all dimensions exactly once")

    @property
    def dim(self):
        return self.idx_a.size + self.idx_b.size

    def params(self):
        return self.s_net.params() + self.t_net.params()

    def _scatter_perm(self):
        perm = np.empty(self.dim, dtype=int)
        perm[self.idx_a] = np.arange(self.idx_a.size)
        perm[self.idx_b] = self.idx_a.size + np.arange(self.idx_b.size)
        return perm

    def _s_t(self, za):
        s_raw = self.s_net.forward(za)
        s = (s_raw * (1.0 / S_CLAMP)).tanh() * S_CLAMP
        t = self.t_net.forward(za)
        return s, t

    def forward(self, z):
        za = z.take_columns(self.idx_a)
        zb = z.take_columns(self.idx_b)
        s, t = self._s_t(za)
        zb_new = zb * s.exp() + t
        out = concat([za, zb_new], axis=1).take_columns(self._scatter_perm())
        logdet = s.sum(axis=1)
        return out, logdet

    def inverse(self, x):
        X = np.atleast_2d(x)
        za = Tensor(X[:, self.idx_a])
        s, t = self._s_t(za)
        zb = (X[:, self.idx_b] - t.values) * np.exp(-s.values)
        z = np.empty_like(X)
        z[:, self.idx_a] = X[:, self.idx_a]
        z[:, self.idx_b] = zb
        return z

    def inverse_tensor(self, x):
        """Differentiable inverse with its log-det (the MLE training path)."""
        za = x.take_columns(self.idx_a)
        xb = x.take_columns(self.idx_b)
        s, t = self._s_t(za)
        zb = (xb - t) * (-s).exp()
        z = concat([za, zb], axis=1).take_columns(self._scatter_perm())
        inv_logdet = -(s.sum(axis=1))
        return z, inv_logdet


@dataclass
class PermutationLayer:
    """Fixed index permutation; volume preserving."""

    perm: np.ndarray

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=int)
        self.inv_perm = np.argsort(self.perm)

    @property
    def dim(self):
        return self.perm.size

    def params(self):
        return []

    def forward(self, z):
        out = z.take_columns(self.perm)
        return out, Tensor(np.zeros(z.values.shape[0]))

    def inverse(self, x):
        return np.atleast_2d(x)[:, self.inv_perm]

    def inverse_tensor(self, x):
        return x.take_columns(self.inv_perm), Tensor(np.zeros(x.values.shape[0]))


@dataclass
class FlowModel:
    """Ordered layer stack over a standard-Gaussian base of dimension dim."""

    layers: list
    dim: int

    def __post_init__(self):
        for layer in self.layers:
            if layer.dim != self.dim:
                raise ValueError("all layers must share the model dimension")

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out


def make_coupling_stack(dim, n_layers, rng, hidden=32):
    """Couplings interleaved with roll-by-one permutations.

    The fixed permutation rotates lanes through the transformed half, so the
    halves effectively alternate layer to layer and every coordinate is
    transformed; alternating the mask on top of the roll would undo the
    rotation for dim = 2 and leave one lane untouched.
    """
    layers = []
    for i in range(n_layers):
        layers.append(CouplingLayer.create(dim, rng.split(10 + i), hidden=hidden))
        if i < n_layers - 1:
            layers.append(PermutationLayer(np.roll(np.arange(dim), 1)))
    return FlowModel(layers, dim)


def forward_with_logdet(model, z0):
    """Push base samples through the stack; returns (x, sum of log-dets)."""
    z = z0 if isinstance(z0, Tensor) else Tensor(np.atleast_2d(np.asarray(z0, dtype=float)))
    total = Tensor(np.zeros(z.values.shape[0]))
    for layer in model.layers:
        z, ld = layer.forward(z)
        total = total + ld
    return z, total


def inverse(model, x):
    """Recover z0 by applying layer inverses in reverse order."""
    z = np.atleast_2d(np.asarray(x, dtype=float))
    for layer in reversed(model.layers):
        z = layer.inverse(z)
    return z


def _base_logpdf(z):
    d = z.shape[1]
    return -0.5 * (d * math.log(2 * math.pi) + np.sum(z * z, axis=1))


def log_likelihood(model, x):
    """log p(x) = log N(z0; 0, I) - sum of forward log-dets evaluated along
    the recovered trajectory."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    z0 = inverse(model, X)
    _, logdet = forward_with_logdet(model, Tensor(z0))
    return _base_logpdf(z0) - logdet.values


def _loglik_tensor(model, x):
    """Differentiable log-likelihood via analytic layer inverses."""
    z = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(np.asarray(x, dtype=float)))
    total = Tensor(np.zeros(z.values.shape[0]))
    for layer in reversed(model.layers):
        if not hasattr(layer, "inverse_tensor"):
            raise ValueError(
                "likelihood training requires analytically invertible layers "
                "(coupling/permutation); planar layers support evaluation only")
        z, ld = layer.inverse_tensor(z)
        total = total + ld
    d = z.values.shape[1]
    base = (z * z).sum(axis=1) * (-0.5) + (-0.5 * d * math.log(2 * math.pi))
    return base + total


def fit(model, data, epochs, batch, rng, lr=1e-3):
    """Minibatch maximum likelihood; returns per-epoch mean log-likelihood."""
    X = np.atleast_2d(np.asarray(data, dtype=float))
    N = X.shape[0]
    params = model.params()
    state = AdamState()
    trace = []
    for epoch in range(epochs):
        order = rng.permutation(N)
        epoch_lls = []
        for start in range(0, N, batch):
            idx = order[start:start + batch]
            ll = _loglik_tensor(model, Tensor(X[idx])).mean()
            if not np.isfinite(ll.values):
                raise FloatingPointError(f"log-likelihood diverged at epoch {epoch}")
            loss = -ll
            zero_grad(params)
            backward(loss)
            state = adam_step(params, [p.grad for p in params], state, lr=lr)
            epoch_lls.append(float(ll.values))
        trace.append(float(np.mean(epoch_lls)))
    return np.asarray(trace)


def sample(model, n, rng):
    """Base draws pushed through the generator direction."""
    z0 = rng.standard_normal((n, model.dim))
    x, _ = forward_with_logdet(model, Tensor(z0))
    return x.values
