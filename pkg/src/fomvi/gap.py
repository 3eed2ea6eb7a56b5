"""Certified duality gap of a policy / kernel pair.

    DG(x, y) = max_{y'} R(x, y') - min_{x'} R(x', y),   R = <p0, v^{x,y}>.

Both terms are fixed points of monotone contractions started at ``v = 0``,
so the iterates approach them from below; stopping when the sup-norm step
is under ``tol * (1 - discount) / (2 * discount)`` leaves each term within
``tol / 2`` of its limit. The certified bound adds that slack (plus the
accumulated inner linear-maximization slack) to the computed gap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import RobustMdpInstance, return_value
from .uncertainty import linear_max_batch


@dataclass
class GapReport:
    worst_case_value: float
    best_response_value: float
    gap: float
    certified_gap: float
    tolerance: float
    iterations: dict = field(default_factory=dict)
    converged: bool = True
    flagged_negative: bool = False

    def to_dict(self):
        return {
            "worst_case_value": self.worst_case_value,
            "best_response_value": self.best_response_value,
            "gap": self.gap,
            "certified_gap": self.certified_gap,
            "tolerance": self.tolerance,
            "iterations": dict(self.iterations),
            "converged": self.converged,
            "flagged_negative": self.flagged_negative,
        }


def _step_threshold(tol, discount):
    return np.inf if discount == 0 else tol * (1.0 - discount) / (2.0 * discount)


class _Budget:
    def __init__(self, max_sweeps, max_seconds):
        self.max_sweeps = max_sweeps
        self.deadline = None if max_seconds is None else time.perf_counter() + max_seconds

    def exhausted(self, sweeps):
        if self.max_sweeps is not None and sweeps >= self.max_sweeps:
            return True
        return self.deadline is not None and time.perf_counter() > self.deadline


def _check_policy(instance, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (instance.num_states, instance.num_actions):
        raise ValueError(f"policy must have shape {(instance.num_states, instance.num_actions)}")
    return x


def _check_kernel(instance, y):
    y = np.asarray(y, dtype=float)
    S, A = instance.num_states, instance.num_actions
    if y.shape != (S, A, S):
        raise ValueError(f"kernel must have shape {(S, A, S)}")
    return y


def worst_case_vector(instance: RobustMdpInstance, x, tol=1e-6, max_sweeps=None, max_seconds=None):
    """Iterate ``v <- max_y F^{x,y}(v)`` from 0.

    Returns ``(v, sweeps, converged, inner_slack)`` where ``inner_slack``
    bounds the per-sweep shortfall of the inner maximizations.
    """
    x = _check_policy(instance, x)
    lam = instance.discount
    lin = (x * instance.costs).sum(axis=1)
    thr = _step_threshold(tol, lam)
    v = np.zeros(instance.num_states)
    budget = _Budget(max_sweeps, max_seconds)
    sweeps, slack = 0, 0.0
    while True:
        lm = linear_max_batch(instance.uncertainty_kind, instance.radius, lam * x[..., None] * v,
                              instance.nominal_kernel)
        nxt = lin + lm.value
        slack = float(np.max(lm.upper_bound - lm.value))
        sweeps += 1
        step = float(np.max(np.abs(nxt - v)))
        v = nxt
        if step < thr:
            return v, sweeps, True, slack
        if budget.exhausted(sweeps):
            return v, sweeps, False, slack


def best_response_vector(instance: RobustMdpInstance, y, tol=1e-6, max_sweeps=None, max_seconds=None):
    """Nominal value iteration ``v <- min_a (c_a + discount * y_a . v)`` on the fixed kernel ``y``."""
    y = _check_kernel(instance, y)
    lam = instance.discount
    thr = _step_threshold(tol, lam)
    v = np.zeros(instance.num_states)
    budget = _Budget(max_sweeps, max_seconds)
    sweeps = 0
    while True:
        nxt = (instance.costs + lam * (y @ v)).min(axis=1)
        sweeps += 1
        step = float(np.max(np.abs(nxt - v)))
        v = nxt
        if step < thr:
            return v, sweeps, True
        if budget.exhausted(sweeps):
            return v, sweeps, False


def worst_case_value(instance: RobustMdpInstance, x, tol=1e-6, **budget):
    """Worst-case return of policy ``x`` over the uncertainty set, and its value vector."""
    v, _, _, _ = worst_case_vector(instance, x, tol, **budget)
    return return_value(instance, v), v


def best_response_value(instance: RobustMdpInstance, y, tol=1e-6, **budget):
    """Optimal return against the fixed kernel ``y``, and its value vector."""
    v, _, _ = best_response_vector(instance, y, tol, **budget)
    return return_value(instance, v), v


def duality_gap(instance: RobustMdpInstance, x, y, tol=1e-6, max_sweeps=None, max_seconds=None) -> GapReport:
    """Duality gap of ``(x, y)`` with a certified upper bound.

    ``max_sweeps`` / ``max_seconds`` cap each contraction; a capped run is
    reported with ``converged=False`` and an infinite certified bound.
    """
    vx, nx, okx, slack = worst_case_vector(instance, x, tol, max_sweeps, max_seconds)
    vy, ny, oky = best_response_vector(instance, y, tol, max_sweeps, max_seconds)
    worst = return_value(instance, vx)
    best = return_value(instance, vy)
    gap = worst - best
    lam = instance.discount
    converged = okx and oky
    certified = gap + 0.5 * tol + slack / (1.0 - lam) if converged else np.inf
    return GapReport(
        worst_case_value=worst,
        best_response_value=best,
        gap=gap,
        certified_gap=certified,
        tolerance=tol,
        iterations={"worst_case": nx, "best_response": ny},
        converged=converged,
        flagged_negative=gap < -4.0 * tol,
    )
