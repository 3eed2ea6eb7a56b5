"""Seeded instance generators: Garnet, machine replacement, healthcare.

Randomness comes from numpy's PCG64 bit generator seeded through a
``SeedSequence``; each generator spawns child sequences in a fixed order
(kernel first, then costs), so outputs depend only on the parameter record
and are identical across platforms.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .errors import ConfigurationError
from .model import RobustMdpInstance
from .uncertainty import Kind


def _rng(seed_seq):
    return np.random.Generator(np.random.PCG64(seed_seq))


def branch_count(n_branch, S):
    # guard against 0.7 * 10 = 7.000000000000001
    return int(math.ceil(n_branch * S - 1e-9))


@dataclass(frozen=True)
class GarnetParams:
    num_states: int
    num_actions: int
    n_branch: float = 0.5
    cost_low: float = 0.0
    cost_high: float = 10.0
    discount: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.num_states < 1 or self.num_actions < 1:
            raise ConfigurationError("Garnet needs at least one state and one action")
        if not 0.0 < self.n_branch <= 1.0:
            raise ConfigurationError(f"branching factor must lie in (0, 1], got {self.n_branch}")
        if branch_count(self.n_branch, self.num_states) < 1:
            raise ConfigurationError("branching factor leaves no reachable next state")
        if not 0.0 <= self.cost_low <= self.cost_high:
            raise ConfigurationError("costs must satisfy 0 <= cost_low <= cost_high")
        if not 0.0 <= self.discount < 1.0:
            raise ConfigurationError("discount must lie in [0, 1)")


def garnet_kernel(S, A, n_branch, rng):
    """Random kernel whose rows each have ``ceil(n_branch * S)`` non-zero entries."""
    k = branch_count(n_branch, S)
    P = np.zeros((S, A, S))
    for s in range(S):
        for a in range(A):
            nxt = rng.choice(S, size=k, replace=False)
            w = rng.uniform(size=k)
            while w.sum() <= 0:
                w = rng.uniform(size=k)
            P[s, a, nxt] = w / w.sum()
    return P


def gen_garnet(params: GarnetParams, uncertainty_kind="ellipsoidal", radius=None) -> RobustMdpInstance:
    """Garnet instance with radius ``sqrt(n_branch * A)`` unless ``radius`` is given."""
    S, A = params.num_states, params.num_actions
    kernel_ss, cost_ss = np.random.SeedSequence(params.seed).spawn(2)
    P = garnet_kernel(S, A, params.n_branch, _rng(kernel_ss))
    c = _rng(cost_ss).uniform(params.cost_low, params.cost_high, size=(S, A))
    if radius is None:
        radius = math.sqrt(params.n_branch * A)
    prov = {"generator": "garnet", "params": asdict(params), "seed": params.seed,
            "library_version": __version__}
    return RobustMdpInstance(c, P, params.discount, np.full(S, 1.0 / S), Kind.parse(uncertainty_kind),
                             radius, prov)


@dataclass(frozen=True)
class MachineParams:
    """Aging chain of the machine-replacement stand-in kernel.

    Operative states wear by one level with probability ``wear``; the worst
    operative state slides into long repair with that probability. Repairing
    sends the machine to standard repair with ``repair_success``, otherwise
    to long repair. Standard repair returns to the new state with
    ``repair_success``; long repair returns with ``long_repair_exit``.
    """

    wear: float = 0.2
    repair_success: float = 0.8
    long_repair_exit: float = 0.4
    worst_cost: float = 20.0
    repair_cost: float = 2.0
    long_repair_cost: float = 10.0


def gen_machine_replacement(num_states, uncertainty_kind="ellipsoidal", radius=None, seed=0,
                            discount=0.8, params: MachineParams | None = None) -> RobustMdpInstance:
    """Machine replacement with ``S - 2`` operative states and two repair states.

    Actions: 0 = keep running, 1 = repair. Costs depend on the state only.
    The kernel is deterministic given ``params``; ``seed`` is recorded for
    provenance. The default radius is ``sqrt(A)``.
    """
    S = int(num_states)
    if S < 5:
        raise ConfigurationError(f"machine replacement needs at least 5 states, got {S}")
    p = params or MachineParams()
    worst, rep, longrep = S - 3, S - 2, S - 1
    A = 2
    c = np.zeros((S, A))
    c[worst], c[rep], c[longrep] = p.worst_cost, p.repair_cost, p.long_repair_cost
    P = np.zeros((S, A, S))
    for s in range(worst):
        P[s, 0, s] += 1.0 - p.wear
        P[s, 0, s + 1] += p.wear
    P[worst, 0, worst] = 1.0 - p.wear
    P[worst, 0, longrep] = p.wear
    for s in range(worst + 1):
        P[s, 1, rep] = p.repair_success
        P[s, 1, longrep] = 1.0 - p.repair_success
    for a in range(A):
        P[rep, a, 0] = p.repair_success
        P[rep, a, longrep] = 1.0 - p.repair_success
        P[longrep, a, 0] = p.long_repair_exit
        P[longrep, a, longrep] = 1.0 - p.long_repair_exit
    if radius is None:
        radius = math.sqrt(A)
    prov = {"generator": "machine_replacement", "params": asdict(p), "seed": int(seed),
            "kernel": "stand-in parameterization",
            "library_version": __version__}
    return RobustMdpInstance(c, P, discount, np.full(S, 1.0 / S), Kind.parse(uncertainty_kind), radius, prov)


@dataclass(frozen=True)
class HealthcareParams:
    """Tridiagonal-plus-mortality stand-in for the patient model.

    Health state 0 is the best. Under drug level ``a`` a patient worsens
    with ``worsen[a]``, improves with ``improve[a]`` and dies with
    ``mortality_base + mortality_slope * severity``, where severity runs
    from 0 (best) to 1 (worst). Higher doses lower deterioration and cost
    ``dose_cost[a]`` more.
    """

    worsen: tuple = (0.3, 0.2, 0.1)
    improve: tuple = (0.1, 0.2, 0.3)
    mortality_base: float = 0.01
    mortality_slope: float = 0.09
    dose_mortality_relief: tuple = (1.0, 0.8, 0.6)
    health_cost_max: float = 10.0
    dose_cost: tuple = (0.0, 1.0, 2.0)
    mortality_cost: float = 20.0
    sample_branch: float = 0.2


def gen_healthcare(num_states, num_samples=60, seed=0, uncertainty_kind="ellipsoidal", discount=0.8,
                   params: HealthcareParams | None = None) -> RobustMdpInstance:
    """Healthcare instance: ``S - 1`` health states, an absorbing mortality state, three doses.

    Radius ``sqrt(S * A)``. ``num_samples`` perturbed kernels are stored on
    the instance.
    """
    S = int(num_states)
    if S < 3:
        raise ConfigurationError(f"healthcare needs at least 3 states, got {S}")
    p = params or HealthcareParams()
    A = 3
    H = S - 1
    dead = S - 1
    P = np.zeros((S, A, S))
    c = np.zeros((S, A))
    for h in range(H):
        severity = h / max(H - 1, 1)
        for a in range(A):
            die = (p.mortality_base + p.mortality_slope * severity) * p.dose_mortality_relief[a]
            up = p.improve[a] if h > 0 else 0.0
            down = p.worsen[a] if h < H - 1 else 0.0
            P[h, a, dead] = die
            if h > 0:
                P[h, a, h - 1] = up
            if h < H - 1:
                P[h, a, h + 1] = down
            P[h, a, h] += 1.0 - die - up - down
            c[h, a] = p.health_cost_max * severity + p.dose_cost[a]
    P[dead, :, dead] = 1.0
    c[dead, :] = p.mortality_cost
    if np.any(P < 0):
        raise ConfigurationError("healthcare parameters produce negative probabilities")
    samples = perturb_samples(P, num_samples, p.sample_branch, seed)
    prov = {"generator": "healthcare", "params": asdict(p), "seed": int(seed), "num_samples": int(num_samples),
            "kernel": "stand-in parameterization",
            "library_version": __version__}
    return RobustMdpInstance(c, P, discount, np.full(S, 1.0 / S), Kind.parse(uncertainty_kind),
                             math.sqrt(S * A), prov, tuple(samples))


def perturb_samples(y0, num_samples, n_branch=0.2, seed=0):
    """Kernels ``0.95 * y0 + 0.05 * y_i`` with ``y_i`` drawn as Garnet kernels."""
    y0 = np.asarray(y0, dtype=float)
    S, A, _ = y0.shape
    if num_samples < 0:
        raise ConfigurationError("sample count must be non-negative")
    children = np.random.SeedSequence(seed).spawn(num_samples) if num_samples else []
    return [0.95 * y0 + 0.05 * garnet_kernel(S, A, n_branch, _rng(ss)) for ss in children]
