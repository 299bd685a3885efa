"""Shared numerical primitives: distributions, log-domain utilities,
Gaussian conditioning, and a seedable deterministic random source.

All matrices are dense, row-major float64 numpy arrays. Log-domain is the
default for mixture/sequential computations; linear-domain variants live
only inside test oracles.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

RNG_ALGORITHM = "philox4x64"

__all__ = [
    "RNG_ALGORITHM",
    "Gaussian",
    "Simplex",
    "RandomSource",
    "log_sum_exp",
    "gaussian_logpdf",
    "gaussian_condition",
    "sample_gaussian",
    "sample_categorical",
    "sample_dirichlet",
    "kl_divergence_categorical",
    "chol_psd",
    "as_matrix",
    "check_finite",
]


class NumericError(ValueError):
    """Raised when a numerical precondition fails (singular/non-PSD input)."""


def check_finite(a, name="array"):
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def as_matrix(data, rows, cols, name="matrix"):
    """Validate and reshape row-major data into a (rows, cols) float array."""
    a = np.asarray(data, dtype=float).reshape(rows, cols)
    return check_finite(a, name)


def chol_psd(cov, jitter_scale=1e-9):
    """Cholesky factor of a symmetric PSD matrix.

    Tries a plain factorization first; on failure adds jitter_scale*trace/d
    to the diagonal once and retries. Raises NumericError if still not PSD.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    d = cov.shape[0]
    jitter = jitter_scale * np.trace(cov) / d
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(d))
    except np.linalg.LinAlgError:
        raise NumericError("covariance not positive semi-definite after jitter")


@dataclass(frozen=True)
class Gaussian:
    """Multivariate normal with dense mean and covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        check_finite(mean, "mean")
        check_finite(cov, "cov")
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise ValueError(f"cov shape {cov.shape} does not match mean length {d}")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("cov is not symmetric within 1e-10")
        # PSD check: smallest eigenvalue may only be negative at roundoff scale.
        w = np.linalg.eigvalsh(0.5 * (cov + cov.T))
        scale = max(1.0, float(np.trace(cov)) / d if d else 1.0)
        if w.min() < -1e-8 * scale:
            raise ValueError("cov is not positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass(frozen=True)
class Simplex:
    """Probability vector: nonnegative entries summing to one."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        check_finite(p, "probs")
        if p.ndim != 1 or p.size == 0:
            raise ValueError("probs must be a non-empty vector")
        if np.any(p < 0):
            raise ValueError("probs has negative entries")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probs sum to {p.sum()!r}, not 1 within 1e-12")
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.shape[0]


def check_simplex_rows(mat, atol=1e-9, name="rows"):
    """Assert each row of mat is a valid simplex (used by invariants/tests)."""
    mat = np.asarray(mat, dtype=float)
    if np.any(mat < -atol):
        raise ValueError(f"{name} contain negative entries")
    if not np.allclose(mat.sum(axis=-1), 1.0, atol=atol):
        raise ValueError(f"{name} do not sum to 1")
    return mat


@dataclass
class RandomSource:
    """Deterministic counter-based random stream.

    Identical (seed, algorithm) produces identical draws across runs and
    platforms. The stream is stateful and must be exclusively owned by its
    caller; use split() to derive independent substreams deterministically.
    """

    seed: int
    algorithm: str = RNG_ALGORITHM
    salt: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.algorithm != RNG_ALGORITHM:
            raise ValueError(f"unknown rng algorithm {self.algorithm!r}")
        seed = int(self.seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        key = np.array([seed, int(self.salt)], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, salt):
        """Independent stream keyed by (seed, salt); stateless derivation."""
        return RandomSource(self.seed, self.algorithm, salt=int(salt))

    def standard_normal(self, shape=None):
        return self._gen.standard_normal() if shape is None else self._gen.standard_normal(shape)

    def uniform(self, shape=None):
        return self._gen.random() if shape is None else self._gen.random(shape)

    def integers(self, low, high, shape=None):
        return self._gen.integers(low, high) if shape is None else self._gen.integers(low, high, shape)

    def standard_gamma(self, alpha):
        return self._gen.standard_gamma(alpha)

    def permutation(self, n):
        return self._gen.permutation(n)


def log_sum_exp(v):
    """Stable log(sum(exp(v))) via max-shift; -inf iff all entries are -inf."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("log_sum_exp of empty vector")
    if np.any(np.isnan(v)) or np.any(v == np.inf):
        raise ValueError("entries must be finite or -inf")
    m = v.max()
    if m == -np.inf:
        return -np.inf
    return float(m + np.log(np.sum(np.exp(v - m))))


def log_sum_exp_rows(mat):
    """Row-wise log_sum_exp for (N, K) arrays (log-domain workhorse).

    Rows of all -inf yield -inf; +inf and NaN are the caller's bug.
    """
    mat = np.asarray(mat, dtype=float)
    m = mat.max(axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = m[..., 0] + np.log(np.sum(np.exp(mat - m), axis=-1))
    return out


def gaussian_logpdf(x, g):
    """Log density of a multivariate normal, via Cholesky."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[0] != g.dim:
        raise ValueError(f"x has dim {x.shape[0]}, Gaussian has dim {g.dim}")
    L = chol_psd(g.cov)
    diff = x - g.mean
    sol = np.linalg.solve(L, diff)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    d = g.dim
    return float(-0.5 * (d * math.log(2 * math.pi) + logdet + sol @ sol))


def gaussian_logpdf_rows(X, mean, cov):
    """Vectorized gaussian_logpdf over the rows of X (shared mean/cov)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    mean = np.asarray(mean, dtype=float)
    L = chol_psd(np.atleast_2d(cov))
    diff = X - mean
    sol = np.linalg.solve(L, diff.T)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    d = mean.shape[0]
    quad = np.sum(sol * sol, axis=0)
    return -0.5 * (d * math.log(2 * math.pi) + logdet + quad)


def gaussian_condition(joint, n_a, observed_b):
    """Condition a joint Gaussian over (a, b) on b = observed_b.

    n_a declares the size of the leading block a. Returns the conditional
    Gaussian N(mu_a + S_ab S_bb^-1 (b - mu_b), S_aa - S_ab S_bb^-1 S_ba).
    """
    observed_b = np.atleast_1d(np.asarray(observed_b, dtype=float))
    d = joint.dim
    n_b = d - n_a
    if n_a <= 0 or n_b <= 0:
        raise ValueError("both blocks must be non-empty")
    if observed_b.shape[0] != n_b:
        raise ValueError(f"observed_b has dim {observed_b.shape[0]}, expected {n_b}")
    mu_a = joint.mean[:n_a]
    mu_b = joint.mean[n_a:]
    S_aa = joint.cov[:n_a, :n_a]
    S_ab = joint.cov[:n_a, n_a:]
    S_bb = joint.cov[n_a:, n_a:]
    try:
        solved = np.linalg.solve(S_bb, np.column_stack([observed_b - mu_b, S_ab.T]))
    except np.linalg.LinAlgError:
        raise NumericError("conditioning block covariance is singular")
    if not np.all(np.isfinite(solved)):
        raise NumericError("conditioning block covariance is singular")
    mean = mu_a + S_ab @ solved[:, 0]
    cov = S_aa - S_ab @ solved[:, 1:]
    cov = 0.5 * (cov + cov.T)
    # Clamp tiny negative eigenvalues born from cancellation.
    w, V = np.linalg.eigh(cov)
    if w.min() < 0:
        cov = (V * np.maximum(w, 0.0)) @ V.T
        cov = 0.5 * (cov + cov.T)
    return Gaussian(mean, cov)


def sample_gaussian(g, rng):
    """Draw from g as mean + L @ eps with L the (jittered) Cholesky factor."""
    if not np.any(g.cov):
        return g.mean.copy()
    L = chol_psd(g.cov)
    eps = rng.standard_normal(g.dim)
    return g.mean + L @ eps


def sample_categorical(p, rng):
    """Index i with probability p_i, by inverse CDF on a single uniform."""
    probs = p.probs if isinstance(p, Simplex) else Simplex(np.asarray(p, dtype=float)).probs
    u = rng.uniform()
    return int(np.searchsorted(np.cumsum(probs), u, side="right").clip(0, len(probs) - 1))


def sample_categorical_many(probs, rng, n):
    """n iid categorical draws from one probability vector."""
    cum = np.cumsum(np.asarray(probs, dtype=float))
    u = rng.uniform(n)
    return np.searchsorted(cum, u, side="right").clip(0, len(cum) - 1)


def sample_dirichlet(alpha, rng):
    """Dirichlet draw via normalized standard-gamma variates."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise ValueError("dirichlet parameters must be positive")
    g = rng.standard_gamma(alpha)
    total = g.sum()
    if total == 0.0:
        # All-underflow corner (enormous concentration deficits); fall back to uniform.
        g = np.ones_like(alpha)
        total = g.sum()
    p = g / total
    # renormalize exactly so downstream Simplex validation never trips
    p = p / p.sum()
    return Simplex(p)


def kl_divergence_categorical(q, p):
    """KL(q || p) = sum q log(q/p); +inf (with warning) if supp(q) not in supp(p)."""
    qp = q.probs if isinstance(q, Simplex) else Simplex(np.asarray(q, dtype=float)).probs
    pp = p.probs if isinstance(p, Simplex) else Simplex(np.asarray(p, dtype=float)).probs
    if qp.shape != pp.shape:
        raise ValueError("distributions have different sizes")
    support = qp > 0
    if np.any(pp[support] == 0):
        warnings.warn("support violation: q positive where p is zero; KL is +inf", RuntimeWarning)
        return math.inf
    return float(np.sum(qp[support] * (np.log(qp[support]) - np.log(pp[support]))))
