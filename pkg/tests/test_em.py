import math

import numpy as np
import pytest

from latentlab.core import RandomSource
from latentlab.em import EmConfig, MonotonicityError, run_em
from latentlab.mixture import fit_gmm, gmm_e_step, gmm_loglik, gmm_m_step


def _blob_data(seed=0, n=200):
    rng = RandomSource(seed)
    return rng.standard_normal((n, 2)) * 0.5 + np.array([1.0, -2.0])


def test_single_component_converges_fast():
    X = _blob_data()
    params, report = fit_gmm(X, 1, EmConfig(seed=0))
    assert report.converged
    assert report.iters <= 2
    assert np.allclose(params.means[0], X.mean(axis=0), atol=1e-10)
    assert np.allclose(params.covs[0], np.cov(X.T, bias=True), atol=1e-6)


def test_two_separated_clusters_monotone_trace():
    rng = RandomSource(1)
    X = np.vstack([rng.standard_normal((150, 2)) + [0, 0],
                   rng.standard_normal((150, 2)) + [10, 0]])
    _params, report = fit_gmm(X, 2, EmConfig(seed=1))
    trace = report.objective_trace
    assert np.all(np.diff(trace) >= -1e-8)
    assert report.converged


def test_infinite_rel_tol_single_iteration():
    X = _blob_data(2)
    cfg = EmConfig(max_iters=100, rel_tol=math.inf, seed=0)
    _params, report = fit_gmm(X, 2, cfg)
    assert report.iters == 1
    assert report.converged


def test_trace_length_equals_iters():
    X = _blob_data(3)
    _params, report = fit_gmm(X, 2, EmConfig(seed=3))
    assert len(report.objective_trace) == report.iters
    assert report.final_objective == report.objective_trace[-1]


def test_idempotence_at_fixed_point():
    rng = RandomSource(40)
    X = np.vstack([rng.standard_normal((200, 2)), rng.standard_normal((200, 2)) + [8, 0]])
    params, _report = fit_gmm(X, 2, EmConfig(seed=4, rel_tol=1e-13, max_iters=2000))
    obj0 = gmm_loglik(params, X)
    _params2, report2 = fit_gmm(X, 2, EmConfig(seed=4, max_iters=1), init=params)
    assert abs(report2.final_objective - obj0) < 1e-6


def test_monotonicity_violation_raises():
    X = _blob_data(5)

    def bad_m_step(data, resp):
        params = gmm_m_step(data, resp)
        if isinstance(params, tuple):
            params = params[0]
        # corrupt the update so the objective drops
        return type(params)(params.weights, params.means + 5.0, params.covs)

    init, _ = fit_gmm(X, 2, EmConfig(seed=5, max_iters=1))
    with pytest.raises(MonotonicityError) as err:
        run_em(gmm_e_step, bad_m_step, gmm_loglik, X, init, EmConfig(seed=5))
    assert err.value.iteration >= 1


def test_config_validation():
    with pytest.raises(ValueError):
        EmConfig(max_iters=0)
    with pytest.raises(ValueError):
        EmConfig(rel_tol=0.0)
