"""Generic EM driver: alternate a model-supplied E-step and M-step while
tracking the objective and enforcing monotone improvement."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["EmConfig", "FitReport", "MonotonicityError", "run_em"]


@dataclass(frozen=True)
class EmConfig:
    max_iters: int = 500
    rel_tol: float = 1e-7
    abs_tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")


@dataclass
class FitReport:
    """Per-iteration objective trace plus convergence bookkeeping.

    The trace holds the objective after each completed EM iteration and is
    non-decreasing up to the driver's slack. events records recoverable
    interventions (e.g. empty-component rescues).
    """

    objective_trace: np.ndarray
    converged: bool
    iters: int
    final_objective: float
    events: list = field(default_factory=list)


class MonotonicityError(RuntimeError):
    """Objective decreased beyond slack: an E/M implementation bug."""

    def __init__(self, iteration, before, after):
        self.iteration = iteration
        self.before = before
        self.after = after
        super().__init__(
            f"objective decreased at iteration {iteration}: {before!r} -> {after!r}"
        )


def run_em(e_step, m_step, objective, data, init_params, cfg,
           monotonic_slack=1e-8):
    """Drive EM to convergence.

    e_step(params, data) -> posterior summary; m_step(data, posterior) ->
    new params; objective(params, data) -> scalar to be maximized. Stops
    when the relative objective change drops below cfg.rel_tol (or the
    absolute change below cfg.abs_tol), or after cfg.max_iters iterations.
    Raises MonotonicityError if the objective falls by more than
    monotonic_slack, which signals a broken update rather than bad data.
    """
    params = init_params
    prev = float(objective(params, data))
    if math.isnan(prev):
        raise FloatingPointError("objective is NaN at initialization")
    trace = []
    events = []
    converged = False
    for it in range(1, cfg.max_iters + 1):
        posterior = e_step(params, data)
        params = m_step(data, posterior)
        if isinstance(params, tuple):
            params, step_events = params
            events.extend(step_events)
        obj = float(objective(params, data))
        if math.isnan(obj):
            raise FloatingPointError(f"objective is NaN at iteration {it}")
        trace.append(obj)
        if obj < prev - monotonic_slack:
            raise MonotonicityError(it, prev, obj)
        delta = abs(obj - prev)
        if delta / max(1.0, abs(obj)) < cfg.rel_tol or delta < cfg.abs_tol:
            converged = True
            prev = obj
            break
        prev = obj
    report = FitReport(
        objective_trace=np.asarray(trace, dtype=float),
        converged=converged,
        iters=len(trace),
        final_objective=prev,
        events=events,
    )
    return params, report
