"""Probabilistic PCA: closed-form maximum likelihood via eigendecomposition,
exact Gaussian posterior, reconstruction, generative sampling, and an EM
alternative converging to the same optimum.

The model is x = W z + mu + eps with z ~ N(0, I_M) and eps ~ N(0, sigma2 I_D),
so marginally x ~ N(mu, W W^T + sigma2 I). The closed-form fit uses the
standard eigendecomposition solution: sigma2 is the mean of the D-M smallest
covariance eigenvalues and W = U_M (L_M - sigma2 I)^(1/2).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Gaussian, RandomSource, check_finite, gaussian_logpdf_rows
from .em import EmConfig, run_em

__all__ = ["PpcaParams", "PpcaPosterior", "fit_closed_form", "posterior",
           "reconstruct", "sample", "fit_em", "marginal_loglik", "canonicalize"]

SIGMA2_FLOOR = 1e-12


@dataclass(frozen=True)
class PpcaParams:
    """Loading matrix W (D x M), data mean mu (D,), noise variance sigma2.

    sigma2 = 0 is the degenerate PCA limit and is accepted only so the
    noiseless formulas stay expressible; fitted models keep sigma2 > 0.
    """

    W: np.ndarray
    mu: np.ndarray
    sigma2: float

    def __post_init__(self):
        W = check_finite(np.atleast_2d(np.asarray(self.W, dtype=float)), "W")
        mu = check_finite(np.atleast_1d(np.asarray(self.mu, dtype=float)), "mu")
        if W.shape[0] != mu.shape[0]:
            raise ValueError("W rows must match mu length")
        if W.shape[1] > W.shape[0]:
            raise ValueError("latent dimension M must not exceed data dimension D")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def data_dim(self):
        return self.W.shape[0]

    @property
    def latent_dim(self):
        return self.W.shape[1]

    def marginal(self):
        """Gaussian over x: N(mu, W W^T + sigma2 I)."""
        D = self.data_dim
        return Gaussian(self.mu, self.W @ self.W.T + self.sigma2 * np.eye(D))


@dataclass(frozen=True)
class PpcaPosterior:
    """Gaussian posterior over z given one observation.

    mean = Minv W^T (x - mu), cov = sigma2 * Minv with M = W^T W + sigma2 I;
    the covariance does not depend on x.
    """

    mean: np.ndarray
    cov: np.ndarray


def _m_matrix(params):
    M = params.latent_dim
    return params.W.T @ params.W + params.sigma2 * np.eye(M)


def fit_closed_form(data, M):
    """Maximum likelihood PPCA fit via eigendecomposition of the sample covariance."""
    X = np.atleast_2d(np.asarray(data, dtype=float))
    check_finite(X, "data")
    N, D = X.shape
    if M >= D:
        raise ValueError("latent dimension M must be < data dimension D")
    if N <= M:
        raise ValueError("need more data points than latent dimensions")
    mu = X.mean(axis=0)
    Xc = X - mu
    S = (Xc.T @ Xc) / N
    evals, evecs = np.linalg.eigh(S)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    if evals[M - 1] <= 0:
        raise ValueError("sample covariance is rank-deficient: fewer than M positive eigenvalues")
    sigma2 = float(np.mean(evals[M:]))
    sigma2 = max(sigma2, 0.0)
    scale = np.sqrt(np.maximum(evals[:M] - sigma2, 0.0))
    W = evecs[:, :M] * scale
    return canonicalize(PpcaParams(W, mu, sigma2))


def posterior(params, x):
    """Exact Gaussian posterior over the latent code for one observation."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[0] != params.data_dim:
        raise ValueError("x has wrong dimension")
    Mmat = _m_matrix(params)
    rhs = params.W.T @ (x - params.mu)
    mean = np.linalg.solve(Mmat, rhs)
    cov = params.sigma2 * np.linalg.inv(Mmat)
    cov = 0.5 * (cov + cov.T)
    return PpcaPosterior(mean, cov)


def reconstruct(params, x):
    """Posterior-mean reconstruction W Minv W^T (x - mu) + mu."""
    post = posterior(params, x)
    return params.W @ post.mean + params.mu


def marginal_loglik(params, data):
    """Total log-likelihood of the rows of data under the marginal Gaussian."""
    X = np.atleast_2d(np.asarray(data, dtype=float))
    D = params.data_dim
    cov = params.W @ params.W.T + params.sigma2 * np.eye(D)
    return float(np.sum(gaussian_logpdf_rows(X, params.mu, cov)))


def sample(params, n, rng, mode="prior", given=None):
    """Draw n observations, either from the prior or from the posterior of
    a given observation (variations of a known data point)."""
    D, M = params.data_dim, params.latent_dim
    if mode == "prior":
        Z = rng.standard_normal((n, M))
    elif mode == "posterior":
        if given is None:
            raise ValueError("posterior sampling requires a conditioning observation")
        post = posterior(params, given)
        L = np.linalg.cholesky(post.cov + 1e-15 * np.eye(M)) if np.any(post.cov) else np.zeros((M, M))
        Z = post.mean + rng.standard_normal((n, M)) @ L.T
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    noise = np.sqrt(params.sigma2) * rng.standard_normal((n, D))
    return Z @ params.W.T + params.mu + noise


def canonicalize(params):
    """Deterministic representative of the W rotation/sign family: columns
    ordered by norm descending, dominant entry of each column positive."""
    W = params.W.copy()
    norms = np.linalg.norm(W, axis=0)
    order = np.argsort(-norms, kind="stable")
    W = W[:, order]
    for j in range(W.shape[1]):
        col = W[:, j]
        if col.size and col[np.argmax(np.abs(col))] < 0:
            W[:, j] = -col
    return PpcaParams(W, params.mu, params.sigma2)


def _em_init(X, M, rng):
    N, D = X.shape
    W0 = rng.standard_normal((D, M)) * np.sqrt(0.1)
    total_var = float(np.trace(np.cov(X.T, bias=True).reshape(D, D))) / D
    return PpcaParams(W0, X.mean(axis=0), 0.5 * max(total_var, SIGMA2_FLOOR))


def fit_em(data, M, cfg: EmConfig, init=None):
    """EM fit; the log-likelihood trace is monotone and the optimum matches
    fit_closed_form up to rotation of W."""
    X = np.atleast_2d(np.asarray(data, dtype=float))
    check_finite(X, "data")
    N, D = X.shape
    if M >= D:
        raise ValueError("latent dimension M must be < data dimension D")
    if N <= M:
        raise ValueError("need more data points than latent dimensions")
    mu = X.mean(axis=0)
    Xc = X - mu

    def e_step(params, _data):
        Mmat = _m_matrix(params)
        Minv = np.linalg.inv(Mmat)
        Ez = Xc @ (Minv @ params.W.T).T            # (N, M)
        Ezz_shared = params.sigma2 * Minv           # shared posterior covariance
        return Ez, Ezz_shared

    def m_step(_data, post):
        Ez, Ezz_shared = post
        sum_xz = Xc.T @ Ez                          # (D, M)
        sum_zz = N * Ezz_shared + Ez.T @ Ez         # (M, M)
        W_new = np.linalg.solve(sum_zz.T, sum_xz.T).T
        resid = np.sum(Xc * Xc) - 2.0 * np.sum(sum_xz * W_new) \
            + np.trace(W_new.T @ W_new @ sum_zz)
        sigma2_new = max(resid / (N * D), SIGMA2_FLOOR)
        return PpcaParams(W_new, mu, sigma2_new)

    def objective(params, _data):
        return marginal_loglik(params, X)

    if init is None:
        init = _em_init(X, M, RandomSource(cfg.seed))
    params, report = run_em(e_step, m_step, objective, X, init, cfg)
    return canonicalize(params), report
