"""Two-parameter logistic item response model with a standard-normal
ability prior. The marginal likelihood integrates ability out by
Gauss-Hermite quadrature; fitting alternates a quadrature E-step with
per-item Newton updates on (log a_j, b_j).

Item response function: P(X_j = 1 | theta) = sigmoid(a_j * theta - b_j).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .core import check_finite, log_sum_exp_rows
from .em import EmConfig, run_em

__all__ = ["IrtParams", "QuadratureRule", "item_prob", "marginal_loglik",
           "posterior_theta", "fit_irt", "default_quadrature"]

DEFAULT_NODES = 41
NEWTON_MAX_STEPS = 25
NEWTON_GRAD_TOL = 1e-10


@dataclass(frozen=True)
class IrtParams:
    """Item discriminations a (J,) and difficulties b (J,).

    Fitted models keep a_j > 0 (identifiability convention); a_j = 0 is
    accepted for evaluation so flat-item limits stay expressible.
    """

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = check_finite(np.atleast_1d(np.asarray(self.a, dtype=float)), "a")
        b = check_finite(np.atleast_1d(np.asarray(self.b, dtype=float)), "b")
        if a.shape != b.shape:
            raise ValueError("a and b must have the same length")
        if np.any(a < 0):
            raise ValueError("discriminations must be nonnegative")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n_items(self):
        return self.a.shape[0]


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights integrating against the standard-normal measure."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = check_finite(np.asarray(self.nodes, dtype=float), "nodes")
        weights = check_finite(np.asarray(self.weights, dtype=float), "weights")
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise ValueError("nodes and weights must be equal-length vectors")
        if np.any(weights <= 0):
            raise ValueError("weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-10:
            raise ValueError("weights must integrate the constant 1 to 1")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)


def default_quadrature(n_nodes=DEFAULT_NODES):
    """Gauss-Hermite rule rescaled to the N(0, 1) prior measure."""
    x, w = hermegauss(n_nodes)
    w = w / math.sqrt(2.0 * math.pi)
    w = w / w.sum()
    return QuadratureRule(x, w)


def item_prob(theta, a_j, b_j):
    """Logistic response probability sigmoid(a_j * theta - b_j)."""
    z = a_j * np.asarray(theta, dtype=float) - b_j
    out = np.empty_like(z, dtype=float) if np.ndim(z) else None
    if out is None:
        return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_responses(params, responses):
    X = np.atleast_2d(np.asarray(responses))
    Xf = np.asarray(X, dtype=float)
    if np.any((Xf != 0) & (Xf != 1)):
        raise ValueError("responses must be binary")
    X = Xf.astype(int)
    if X.shape[1] != params.n_items:
        raise ValueError("responses have wrong number of items")
    return X


def _log_lik_at_nodes(params, X, quad):
    """(N, Q) log p(x_i | theta_q) from the Bernoulli item products."""
    # log sigmoid(z) = -softplus(-z), log(1 - sigmoid(z)) = -softplus(z)
    Z = np.outer(quad.nodes, params.a) - params.b          # (Q, J)
    log_p1 = -np.logaddexp(0.0, -Z)
    log_p0 = -np.logaddexp(0.0, Z)
    return X @ log_p1.T + (1 - X) @ log_p0.T               # (N, Q)


def marginal_loglik(params, responses, quad):
    """Quadrature approximation of sum_i log integral p(x_i | th) N(th) dth."""
    X = _check_responses(params, responses)
    ll = _log_lik_at_nodes(params, X, quad)
    return float(np.sum(log_sum_exp_rows(ll + np.log(quad.weights))))


def posterior_theta(params, x, quad):
    """Discretized ability posterior for one response vector.

    Returns (eap, sd, node_weights); node_weights is the normalized
    posterior mass over quadrature nodes.
    """
    X = _check_responses(params, np.atleast_2d(x))
    ll = _log_lik_at_nodes(params, X, quad)[0] + np.log(quad.weights)
    ll -= ll.max()
    w = np.exp(ll)
    w /= w.sum()
    eap = float(w @ quad.nodes)
    var = float(w @ (quad.nodes - eap) ** 2)
    return eap, math.sqrt(max(var, 0.0)), w


def _node_posteriors(params, X, quad):
    ll = _log_lik_at_nodes(params, X, quad) + np.log(quad.weights)
    gamma = np.exp(ll - log_sum_exp_rows(ll)[:, None])
    gamma /= gamma.sum(axis=1, keepdims=True)
    return gamma                                           # (N, Q)


def _item_objective(c, b, theta, r, n):
    """Expected Bernoulli log-likelihood of one item on the node grid,
    parameterized by c = log(a)."""
    z = math.exp(c) * theta - b
    log_p1 = -np.logaddexp(0.0, -z)
    log_p0 = -np.logaddexp(0.0, z)
    return float(r @ log_p1 + (n - r) @ log_p0)


def _newton_item(theta, r, n, c0, b0):
    """Maximize the per-item expected log-likelihood by damped Newton steps
    in (log a, b)."""
    c, b = c0, b0
    f = _item_objective(c, b, theta, r, n)
    for _ in range(NEWTON_MAX_STEPS):
        a = math.exp(c)
        z = a * theta - b
        p = 1.0 / (1.0 + np.exp(-z))
        resid = r - n * p
        g_a = float(resid @ theta)
        g_b = -float(resid.sum())
        w = n * p * (1.0 - p)
        h_aa = -float(w @ (theta * theta))
        h_ab = float(w @ theta)
        h_bb = -float(w.sum())
        # chain rule to c = log a
        g_c = a * g_a
        h_cc = a * a * h_aa + a * g_a
        h_cb = a * h_ab
        grad = np.array([g_c, g_b])
        if np.linalg.norm(grad, ord=np.inf) < NEWTON_GRAD_TOL:
            break
        H = np.array([[h_cc, h_cb], [h_cb, h_bb]])
        H -= 1e-10 * np.eye(2)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = -grad
        t = 1.0
        improved = False
        for _ in range(30):
            c_new, b_new = c - t * step[0], b - t * step[1]
            f_new = _item_objective(c_new, b_new, theta, r, n)
            if f_new >= f:
                c, b, f = c_new, b_new, f_new
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    return c, b


def fit_irt(responses, quad, cfg: EmConfig, init=None):
    """EM fit of the 2PL model. The E-step discretizes each person's ability
    posterior on the quadrature grid; the M-step refits every item to the
    expected response counts at the nodes."""
    X = np.atleast_2d(np.asarray(responses, dtype=int))
    N, J = X.shape
    if N < 2 or J < 1:
        raise ValueError("need at least 2 persons and 1 item")
    col_means = X.mean(axis=0)
    constant = np.where((col_means == 0) | (col_means == 1))[0]
    if constant.size:
        raise ValueError(f"item {constant[0]} has constant responses; parameters unidentifiable")
    if init is None:
        # logit of the observed proportion gives a reasonable difficulty start
        b0 = -np.log(col_means / (1 - col_means))
        init = IrtParams(np.ones(J), b0)

    def e_step(params, data):
        return params, _node_posteriors(params, data, quad)

    def m_step(data, posterior):
        prev, gamma = posterior
        n_q = gamma.sum(axis=0)                    # expected persons per node
        r = gamma.T @ data                         # (Q, J) expected correct
        a_new = np.empty(J)
        b_new = np.empty(J)
        for j in range(J):
            c0 = math.log(max(prev.a[j], 1e-3))    # warm-start Newton at previous item values
            c, b = _newton_item(quad.nodes, r[:, j], n_q, c0, prev.b[j])
            a_new[j] = math.exp(c)
            b_new[j] = b
        return IrtParams(a_new, b_new)

    def objective(params, data):
        return marginal_loglik(params, data, quad)

    params, report = run_em(e_step, m_step, objective, X, init, cfg,
                            monotonic_slack=1e-6)
    return params, report
