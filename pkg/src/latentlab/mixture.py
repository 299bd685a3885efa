"""Flat discrete-latent models sharing the responsibility machinery:
Gaussian mixtures over continuous data and latent class analysis over
categorical items. All likelihood work is done in the log domain.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (RandomSource, chol_psd, check_finite, check_simplex_rows,
                   log_sum_exp_rows)
from .em import EmConfig, run_em

__all__ = [
    "GmmParams", "LcaParams", "Responsibilities",
    "gmm_loglik", "gmm_e_step", "gmm_m_step", "fit_gmm",
    "lca_loglik", "lca_e_step", "lca_m_step", "fit_lca",
]

EMPTY_COMPONENT_COUNT = 1e-8
PROB_FLOOR = 1e-10


@dataclass(frozen=True)
class GmmParams:
    """Mixture weights (K,), component means (K, d), covariances (K, d, d)."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        w = check_simplex_rows(np.asarray(self.weights, dtype=float), name="weights")
        means = check_finite(np.atleast_2d(np.asarray(self.means, dtype=float)), "means")
        covs = check_finite(np.asarray(self.covs, dtype=float), "covs")
        K, d = means.shape
        if w.shape != (K,) or covs.shape != (K, d, d):
            raise ValueError("inconsistent GMM parameter shapes")
        for k in range(K):
            chol_psd(covs[k])
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]


@dataclass(frozen=True)
class LcaParams:
    """Class weights (K,) and per-item conditional category tables.

    item_probs[j] is a (K, C_j) row-stochastic array: row k is the category
    distribution of item j within class k.
    """

    weights: np.ndarray
    item_probs: tuple

    def __post_init__(self):
        w = check_simplex_rows(np.asarray(self.weights, dtype=float), name="weights")
        K = w.shape[0]
        tables = []
        for j, table in enumerate(self.item_probs):
            t = np.asarray(table, dtype=float)
            if t.ndim != 2 or t.shape[0] != K:
                raise ValueError(f"item {j} table must be (K, C_j)")
            check_simplex_rows(t, name=f"item {j} rows")
            tables.append(t)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "item_probs", tuple(tables))

    @property
    def n_classes(self):
        return self.weights.shape[0]

    @property
    def n_items(self):
        return len(self.item_probs)


@dataclass(frozen=True)
class Responsibilities:
    """Posterior component memberships, one simplex row per data point."""

    gamma: np.ndarray

    def __post_init__(self):
        g = check_simplex_rows(np.atleast_2d(np.asarray(self.gamma, dtype=float)),
                               name="responsibility rows")
        object.__setattr__(self, "gamma", g)


# ---------------------------------------------------------------------------
# Gaussian mixtures

def _gmm_log_joint(params, X):
    """log pi_k + log N(x_i | mu_k, Sigma_k) as an (N, K) array."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N, d = X.shape
    if d != params.dim:
        raise ValueError(f"data dim {d} does not match model dim {params.dim}")
    K = params.n_components
    out = np.empty((N, K))
    log_w = np.log(np.where(params.weights > 0, params.weights, 1e-300))
    for k in range(K):
        L = chol_psd(params.covs[k])
        diff = X - params.means[k]
        sol = np.linalg.solve(L, diff.T)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        quad = np.sum(sol * sol, axis=0)
        out[:, k] = log_w[k] - 0.5 * (d * np.log(2 * np.pi) + logdet + quad)
    return out


def gmm_loglik(params, data):
    """Total log-likelihood sum_i log sum_k pi_k N(x_i | mu_k, Sigma_k)."""
    return float(np.sum(log_sum_exp_rows(_gmm_log_joint(params, data))))


def gmm_e_step(params, data):
    """Responsibilities gamma_ik = p(z = k | x_i), computed in the log domain."""
    lj = _gmm_log_joint(params, data)
    gamma = np.exp(lj - log_sum_exp_rows(lj)[:, None])
    gamma /= gamma.sum(axis=1, keepdims=True)
    return Responsibilities(gamma)


# The component posterior IS the responsibility computation; one code path.
gmm_posterior = gmm_e_step


def _cov_floor(covs, floor):
    """Clamp eigenvalues of each covariance at floor."""
    out = np.empty_like(covs)
    for k in range(covs.shape[0]):
        C = 0.5 * (covs[k] + covs[k].T)
        w, V = np.linalg.eigh(C)
        out[k] = (V * np.maximum(w, floor)) @ V.T
        out[k] = 0.5 * (out[k] + out[k].T)
    return out


def gmm_m_step(data, resp, cov_floor=None):
    """Weighted-average parameter updates from responsibilities.

    An effectively empty component is re-seeded at the most ambiguous data
    point (lowest maximum responsibility); the rescue is reported in the
    returned events list as (params, events).
    """
    X = np.atleast_2d(np.asarray(data, dtype=float))
    gamma = resp.gamma.copy()
    N, d = X.shape
    K = gamma.shape[1]
    events = []
    counts = gamma.sum(axis=0)
    for k in np.where(counts < EMPTY_COMPONENT_COUNT)[0]:
        i = int(np.argmin(gamma.max(axis=1)))
        gamma[i] = 0.0
        gamma[i, k] = 1.0
        events.append(f"component {k} empty; re-seeded at data point {i}")
    counts = gamma.sum(axis=0)
    weights = counts / counts.sum()
    means = (gamma.T @ X) / counts[:, None]
    global_var = float(np.mean(np.var(X, axis=0)))
    floor = cov_floor if cov_floor is not None else 1e-6 * max(global_var, 1e-12)
    covs = np.empty((K, d, d))
    for k in range(K):
        diff = X - means[k]
        covs[k] = (gamma[:, k, None] * diff).T @ diff / counts[k]
    covs = _cov_floor(covs, floor)
    params = GmmParams(weights, means, covs)
    return (params, events) if events else params


def _farthest_point_means(X, K, rng):
    """Greedy farthest-point sweep from a seeded start; deterministic."""
    N = X.shape[0]
    first = int(rng.integers(0, N))
    chosen = [first]
    dist = np.sum((X - X[first]) ** 2, axis=1)
    for _ in range(1, K):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[chosen].copy()


def fit_gmm(data, K, cfg: EmConfig, init=None):
    """EM fit of a K-component Gaussian mixture; deterministic given cfg.seed."""
    X = np.atleast_2d(np.asarray(data, dtype=float))
    check_finite(X, "data")
    N, d = X.shape
    if N < K:
        raise ValueError("need at least K data points")
    if init is None:
        rng = RandomSource(cfg.seed).split(101)
        means = _farthest_point_means(X, K, rng)
        gcov = np.cov(X.T, bias=True).reshape(d, d)
        gcov = _cov_floor(gcov[None], 1e-6 * max(float(np.mean(np.var(X, axis=0))), 1e-12))[0]
        init = GmmParams(np.full(K, 1.0 / K), means, np.repeat(gcov[None], K, axis=0))
    return run_em(gmm_e_step, gmm_m_step, gmm_loglik, X, init, cfg)


# ---------------------------------------------------------------------------
# Latent class analysis

def _check_lca_data(params, data):
    X = np.atleast_2d(np.asarray(data))
    if not np.issubdtype(X.dtype, np.integer):
        Xf = np.asarray(X, dtype=float)
        if np.any(Xf != np.round(Xf)):
            raise ValueError("LCA data must be integer category codes")
        X = Xf.astype(int)
    if X.shape[1] != params.n_items:
        raise ValueError(f"data has {X.shape[1]} items, model has {params.n_items}")
    for j, table in enumerate(params.item_probs):
        C = table.shape[1]
        bad = np.where((X[:, j] < 0) | (X[:, j] >= C))[0]
        if bad.size:
            raise ValueError(f"item {j} category out of range at row {bad[0]}")
    return X


def _lca_log_joint(params, X):
    N = X.shape[0]
    K = params.n_classes
    out = np.tile(np.log(np.where(params.weights > 0, params.weights, 1e-300)), (N, 1))
    for j, table in enumerate(params.item_probs):
        logt = np.log(np.where(table > 0, table, 1e-300))
        out += logt[:, X[:, j]].T
    return out


def lca_loglik(params, data):
    X = _check_lca_data(params, data)
    return float(np.sum(log_sum_exp_rows(_lca_log_joint(params, X))))


def lca_e_step(params, data):
    X = _check_lca_data(params, data)
    lj = _lca_log_joint(params, X)
    gamma = np.exp(lj - log_sum_exp_rows(lj)[:, None])
    gamma /= gamma.sum(axis=1, keepdims=True)
    return Responsibilities(gamma)


lca_posterior = lca_e_step


def lca_m_step(data, resp, n_categories=None):
    """Update class weights and per-item category tables from expected counts.

    n_categories fixes each item's table width; by default it is inferred
    as max(code)+1 per item. Probabilities are floored at 1e-10 and
    renormalized.
    """
    X = np.atleast_2d(np.asarray(data, dtype=int))
    gamma = resp.gamma
    N, J = X.shape
    K = gamma.shape[1]
    events = []
    counts = gamma.sum(axis=0)
    if np.any(counts < EMPTY_COMPONENT_COUNT):
        gamma = gamma.copy()
        for k in np.where(counts < EMPTY_COMPONENT_COUNT)[0]:
            i = int(np.argmin(gamma.max(axis=1)))
            gamma[i] = 0.0
            gamma[i, k] = 1.0
            events.append(f"class {k} empty; re-seeded at data point {i}")
        counts = gamma.sum(axis=0)
    weights = counts / counts.sum()
    tables = []
    for j in range(J):
        C = int(X[:, j].max()) + 1 if n_categories is None else int(n_categories[j])
        onehot = np.zeros((N, C))
        onehot[np.arange(N), X[:, j]] = 1.0
        table = (gamma.T @ onehot) / counts[:, None]
        table = np.maximum(table, PROB_FLOOR)
        table /= table.sum(axis=1, keepdims=True)
        tables.append(table)
    params = LcaParams(weights, tuple(tables))
    return (params, events) if events else params


def fit_lca(data, K, cfg: EmConfig, n_categories=None, init=None):
    """EM fit of a K-class latent class model over categorical items."""
    X = np.atleast_2d(np.asarray(data, dtype=int))
    N, J = X.shape
    if N < K:
        raise ValueError("need at least K data points")
    if n_categories is None:
        n_categories = [int(X[:, j].max()) + 1 for j in range(J)]
    if init is None:
        rng = RandomSource(cfg.seed).split(202)
        tables = []
        for j in range(J):
            C = n_categories[j]
            freq = np.bincount(X[:, j], minlength=C).astype(float) / N
            freq = np.maximum(freq, PROB_FLOOR)
            # +-10% seeded perturbation per class breaks the K=1 symmetry trap
            noise = 1.0 + 0.1 * (2.0 * rng.uniform((K, C)) - 1.0)
            table = freq[None, :] * noise
            table /= table.sum(axis=1, keepdims=True)
            tables.append(table)
        init = LcaParams(np.full(K, 1.0 / K), tuple(tables))

    def m_step(d, resp):
        return lca_m_step(d, resp, n_categories=n_categories)

    return run_em(lca_e_step, m_step, lca_loglik, X, init, cfg)
