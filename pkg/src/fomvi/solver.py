"""FOM-VI: primal-dual prox iterations interleaved with approximate value iteration.

Each epoch ``l`` runs ``T_l = l^q`` primal-dual steps on every state's
bilinear saddle problem with payoff fixed by the current value ``v``,
warm-started from the previous epoch's last iterates. The epoch's weighted
average pair (weights ``t^p``) then performs the value update

    v_s <- F^{xbar_s, ybar_s}(v)_s,

synchronously for all states. The global weighted averages are the output
and their duality gap is checked every few epochs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .gap import GapReport, duality_gap
from .model import RobustMdpInstance, payoff_all
from .prox import NormPair, prox_x, prox_y

__all__ = ["ProxSetup", "Schedule", "SolveReport", "make_step_sizes", "pda_step", "run_fom_vi", "FomViState"]


@dataclass(frozen=True)
class ProxSetup:
    norm_pair: NormPair
    tau: float
    sigma: float
    omega: float
    beta: float

    @property
    def max_lipschitz(self) -> float:
        """Largest operator norm of the payoff map these step sizes allow."""
        return 1.0 / math.sqrt(self.tau * self.sigma)


def make_step_sizes(instance: RobustMdpInstance, norm_pair="l2") -> ProxSetup:
    """Step sizes and diameter bound for the chosen norm pair.

    Both choices satisfy ``tau * sigma * L^2 <= 1`` for the payoff operator
    norm ``L`` at any value bounded by ``max c / (1 - discount)``.
    """
    norm = NormPair.parse(norm_pair)
    lam = instance.discount
    r = instance.max_cost
    S, A = instance.num_states, instance.num_actions
    if r <= 0:
        raise ConfigurationError("step sizes need a positive maximum cost")
    if lam <= 0:
        raise ConfigurationError("step sizes need a positive discount")
    scale = (1.0 - lam) / (lam * r)
    if norm is NormPair.L2L2:
        tau = scale / math.sqrt(A * S)
        sigma = scale * math.sqrt(A) / math.sqrt(S)
        omega = 2.0 * math.sqrt(A * S) / scale
        lip = math.sqrt(S) / scale  # discount * ||v||_2 bound
        beta = 1.0
    else:
        if A < 2 or S < 2:
            raise ConfigurationError("the entropic setup needs at least two states and two actions")
        ratio = math.sqrt(math.log(A) / math.log(S))
        tau = scale / A * ratio
        sigma = scale * A * ratio
        omega = 2.0 * A / ratio / scale
        lip = 1.0 / scale  # discount * ||v||_inf bound
        beta = A / 2.0
    # relative slack for rounding in the product
    assert tau * sigma * lip**2 <= 1.0 + 1e-12
    return ProxSetup(norm, tau, sigma, omega, beta)


@dataclass(frozen=True)
class Schedule:
    p: int = 2
    q: int = 2
    max_epochs: int = 1000
    gap_check_period: int = 5
    eps: float = 0.1

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ConfigurationError("schedule exponents must be non-negative")
        if self.max_epochs < 1 or self.gap_check_period < 1:
            raise ConfigurationError("max_epochs and gap_check_period must be positive")
        if not self.eps > 0:
            raise ConfigurationError("target accuracy must be positive")

    def weight(self, t: int) -> float:
        return float(t) ** self.p

    def epoch_length(self, epoch: int) -> int:
        return int(epoch) ** self.q


@dataclass
class FomViState:
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    x_avg: np.ndarray
    y_avg: np.ndarray
    weight_total: float = 0.0
    epoch: int = 0
    iteration: int = 0


@dataclass
class SolveReport:
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    converged: bool
    epochs: int
    iterations: int
    trace: list
    gap: GapReport | None
    setup: ProxSetup
    schedule: Schedule
    elapsed_seconds: float
    prox_stats: dict = field(default_factory=dict)
    history: list | None = None
    stop_reason: str = ""


def pda_step(instance: RobustMdpInstance, x, y, v, setup: ProxSetup, prox_tol=1e-10, stats=None):
    """One primal-dual step for all states at once; returns ``(x_new, y_new)``.

    The policy step uses the full payoff gradient ``c_s + K^T y_s``; the
    kernel step is measured at the extrapolated point ``2 x_new - x``.
    """
    lam = instance.discount
    grad_x = instance.costs + lam * (y @ v)
    x_new = prox_x(setup.norm_pair, x, grad_x, setup.tau)
    x_bar = 2.0 * x_new - x
    grad_y = -lam * x_bar[..., None] * v
    y_new = prox_y(instance.uncertainty_kind, setup.norm_pair, y, grad_y, setup.sigma,
                   instance.nominal_kernel, instance.radius, beta=setup.beta, tol=prox_tol, stats=stats)
    return x_new, y_new


def initial_state(instance: RobustMdpInstance, init="uniform", seed=None) -> FomViState:
    S, A = instance.num_states, instance.num_actions
    if init == "uniform":
        x = np.full((S, A), 1.0 / A)
        y = np.full((S, A, S), 1.0 / S)
    elif init == "random":
        rng = np.random.Generator(np.random.PCG64(seed))
        x = rng.dirichlet(np.ones(A), size=S)
        y = rng.dirichlet(np.ones(S), size=(S, A))
    else:
        raise ConfigurationError(f"unknown initialization {init!r}")
    return FomViState(x, y, np.zeros(S), x.copy(), y.copy())


def _zero_cost_report(instance, norm_pair, schedule, eval_tol):
    # every pair is optimal when all costs vanish; step sizes are undefined here
    start = time.perf_counter()
    S, A = instance.num_states, instance.num_actions
    x = np.full((S, A), 1.0 / A)
    y = np.array(instance.nominal_kernel)
    gap = duality_gap(instance, x, y, tol=eval_tol)
    elapsed = time.perf_counter() - start
    row = {"epoch": 0, "iteration": 0, "residual_inf": 0.0, "certified_gap": gap.certified_gap,
           "elapsed_seconds": elapsed}
    setup = ProxSetup(NormPair.parse(norm_pair), math.inf, math.inf, 0.0, A / 2.0)
    return SolveReport(x, y, np.zeros(S), True, 0, 0, [row], gap, setup, schedule, elapsed, {}, None, "zero_cost")


def run_fom_vi(instance: RobustMdpInstance, norm_pair="l2", schedule: Schedule | None = None,
               gap_tolerance=None, gap_eval_tol=None, prox_tol=1e-10, max_seconds=None, init="uniform",
               seed=None, keep_history=False, on_epoch=None) -> SolveReport:
    """Run FOM-VI until the certified duality gap of the averages is at most ``gap_tolerance``.

    ``gap_tolerance`` defaults to ``schedule.eps / 2``; the evaluator runs at
    ``gap_eval_tol`` (default ``eps / 20``). ``on_epoch`` receives each trace
    row as it is produced. ``keep_history`` stores every iterate (small
    instances only).
    """
    schedule = schedule or Schedule()
    target = schedule.eps / 2.0 if gap_tolerance is None else gap_tolerance
    eval_tol = schedule.eps / 20.0 if gap_eval_tol is None else gap_eval_tol
    if instance.max_cost == 0:
        return _zero_cost_report(instance, norm_pair, schedule, eval_tol)
    setup = make_step_sizes(instance, norm_pair)
    state = initial_state(instance, init, seed)
    stats: dict = {}
    trace: list = []
    history = [] if keep_history else None
    start = time.perf_counter()
    report_gap = None
    converged = False
    stop_reason = "max_epochs"
    lam = instance.discount
    costs = instance.costs

    for epoch in range(1, schedule.max_epochs + 1):
        state.epoch = epoch
        x_loc = np.zeros_like(state.x)
        y_loc = np.zeros_like(state.y)
        loc_total = 0.0
        for _ in range(schedule.epoch_length(epoch)):
            state.iteration += 1
            x_new, y_new = pda_step(instance, state.x, state.y, state.v, setup, prox_tol, stats)
            state.x, state.y = x_new, y_new
            w = schedule.weight(state.iteration)
            loc_total += w
            r = w / loc_total
            x_loc += r * (x_new - x_loc)
            y_loc += r * (y_new - y_loc)
            state.weight_total += w
            r = w / state.weight_total
            state.x_avg += r * (x_new - state.x_avg)
            state.y_avg += r * (y_new - state.y_avg)
            if history is not None:
                history.append((w, x_new.copy(), y_new.copy()))
        v_new = payoff_all(costs, lam, x_loc, y_loc, state.v)
        residual = float(np.max(np.abs(v_new - state.v)))
        state.v = v_new
        row = {"epoch": epoch, "iteration": state.iteration, "residual_inf": residual,
               "certified_gap": None, "elapsed_seconds": time.perf_counter() - start}
        if epoch % schedule.gap_check_period == 0:
            report_gap = duality_gap(instance, state.x_avg, state.y_avg, tol=eval_tol)
            row["certified_gap"] = report_gap.certified_gap
            row["elapsed_seconds"] = time.perf_counter() - start
            if report_gap.certified_gap <= target:
                converged = True
                stop_reason = "gap"
        trace.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if converged:
            break
        if max_seconds is not None and time.perf_counter() - start > max_seconds:
            stop_reason = "time"
            break

    x_out = state.x_avg / state.x_avg.sum(axis=-1, keepdims=True)
    y_out = state.y_avg / state.y_avg.sum(axis=-1, keepdims=True)
    return SolveReport(x_out, y_out, state.v, converged, state.epoch, state.iteration, trace, report_gap,
                       setup, schedule, time.perf_counter() - start, stats, history, stop_reason)
