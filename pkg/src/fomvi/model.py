"""Robust MDP instances and the bilinear forms the solvers are built from.

Index conventions: costs ``c[s, a]``, kernels ``y[s, a, s']``, policies
``x[s, a]``. The per-state payoff of a policy row ``x_s`` against a kernel
block ``y_s`` under value ``v`` is

    F^{x,y}(v)_s = sum_a x_sa * (c_sa + discount * y_sa . v).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import StructuralError
from .uncertainty import Kind, UncertaintySpec

ROW_SUM_TOL = 1e-12
DENSE_SOLVE_LIMIT = 2000


@dataclass(frozen=True)
class RobustMdpInstance:
    costs: np.ndarray
    nominal_kernel: np.ndarray
    discount: float
    initial_distribution: np.ndarray
    uncertainty_kind: Kind = Kind.ELLIPSOIDAL
    radius: float = 0.0
    provenance: dict = field(default_factory=dict, compare=False)
    samples: tuple = field(default=(), compare=False)

    def __post_init__(self):
        c = np.array(self.costs, dtype=float)
        y0 = np.array(self.nominal_kernel, dtype=float)
        p0 = np.array(self.initial_distribution, dtype=float)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise StructuralError(f"costs must be a non-empty S x A matrix, got shape {c.shape}")
        S, A = c.shape
        if y0.shape != (S, A, S):
            raise StructuralError(f"nominal kernel must have shape {(S, A, S)}, got {y0.shape}")
        if p0.shape != (S,):
            raise StructuralError(f"initial distribution must have length {S}, got shape {p0.shape}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(y0)) and np.all(np.isfinite(p0))):
            raise ValueError("instance arrays must be finite")
        if np.any(c < 0):
            raise ValueError("costs must be non-negative")
        if np.any(y0 < 0) or np.any(np.abs(y0.sum(axis=-1) - 1.0) > ROW_SUM_TOL):
            raise ValueError("every nominal kernel row must be a probability vector")
        if np.any(p0 < 0) or abs(p0.sum() - 1.0) > ROW_SUM_TOL:
            raise ValueError("initial distribution must be a probability vector")
        # 0 is allowed so that the pure-cost case can be expressed
        if not 0.0 <= float(self.discount) < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        for arr in (c, y0, p0):
            arr.setflags(write=False)
        object.__setattr__(self, "costs", c)
        object.__setattr__(self, "nominal_kernel", y0)
        object.__setattr__(self, "initial_distribution", p0)
        object.__setattr__(self, "discount", float(self.discount))
        object.__setattr__(self, "uncertainty_kind", Kind.parse(self.uncertainty_kind))
        object.__setattr__(self, "radius", float(self.radius))
        object.__setattr__(self, "samples", tuple(np.asarray(k, dtype=float) for k in self.samples))
        # validates the radius
        self.uncertainty

    @property
    def num_states(self) -> int:
        return self.costs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.costs.shape[1]

    @property
    def max_cost(self) -> float:
        return float(self.costs.max())

    @property
    def value_bound(self) -> float:
        """Upper bound on any discounted value, ``max c / (1 - discount)``."""
        return self.max_cost / (1.0 - self.discount)

    @property
    def uncertainty(self) -> UncertaintySpec:
        return UncertaintySpec(self.uncertainty_kind, self.radius, self.nominal_kernel)

    def with_radius(self, radius: float) -> "RobustMdpInstance":
        return RobustMdpInstance(
            self.costs, self.nominal_kernel, self.discount, self.initial_distribution,
            self.uncertainty_kind, radius, dict(self.provenance), self.samples,
        )

    # ---- serialization ------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        out = {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "discount": self.discount,
            "costs": self.costs.tolist(),
            "nominal_kernel": self.nominal_kernel.tolist(),
            "initial_distribution": self.initial_distribution.tolist(),
            "uncertainty": {"kind": self.uncertainty_kind.value, "radius": self.radius},
        }
        if self.provenance:
            out["provenance"] = self.provenance
        if self.samples:
            out["samples"] = [k.tolist() for k in self.samples]
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RobustMdpInstance":
        try:
            S, A = int(data["num_states"]), int(data["num_actions"])
            unc = data.get("uncertainty", {"kind": "ellipsoidal", "radius": 0.0})
            inst = cls(
                costs=data["costs"],
                nominal_kernel=data["nominal_kernel"],
                discount=data["discount"],
                initial_distribution=data.get("initial_distribution", np.full(S, 1.0 / S)),
                uncertainty_kind=unc["kind"],
                radius=unc["radius"],
                provenance=data.get("provenance", {}),
                samples=tuple(data.get("samples", ())),
            )
        except KeyError as exc:
            raise StructuralError(f"instance JSON is missing field {exc.args[0]!r}") from None
        if (inst.num_states, inst.num_actions) != (S, A):
            raise StructuralError("declared num_states/num_actions do not match the arrays")
        return inst


def dumps_instance(instance: RobustMdpInstance) -> str:
    # json writes floats with repr, which round-trips doubles exactly
    return json.dumps(instance.to_dict(), indent=1, sort_keys=True) + "\n"


def save_instance(instance: RobustMdpInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_instance(instance))


def load_instance(path) -> RobustMdpInstance:
    with open(path, encoding="utf-8") as fh:
        return RobustMdpInstance.from_dict(json.load(fh))


# ---- bilinear forms ---------------------------------------------------------


def _check_state(instance, s):
    if not 0 <= s < instance.num_states:
        raise StructuralError(f"state index {s} out of range for S={instance.num_states}")


def apply_K(v, x_s, discount):
    """``(K x_s)[a, s'] = discount * x_sa * v_s'``, shape ``(..., A, S)``."""
    v = np.asarray(v, dtype=float)
    x_s = np.asarray(x_s, dtype=float)
    return discount * x_s[..., :, None] * v


def apply_K_transpose(v, y_s, discount):
    """``(K^T y_s)[a] = discount * y_sa . v``, shape ``(..., A)``."""
    v = np.asarray(v, dtype=float)
    y_s = np.asarray(y_s, dtype=float)
    if y_s.shape[-1] != v.shape[-1]:
        raise StructuralError(f"kernel block last axis {y_s.shape[-1]} does not match value length {v.shape[-1]}")
    return discount * (y_s @ v)


def bilinear_value(instance: RobustMdpInstance, s, x_s, y_s, v) -> float:
    """``sum_a x_sa (c_sa + discount * y_sa . v)`` for one state."""
    _check_state(instance, s)
    S, A = instance.num_states, instance.num_actions
    x_s = np.asarray(x_s, dtype=float)
    y_s = np.asarray(y_s, dtype=float)
    v = np.asarray(v, dtype=float)
    if x_s.shape != (A,) or y_s.shape != (A, S) or v.shape != (S,):
        raise StructuralError(f"expected x_s {(A,)}, y_s {(A, S)}, v {(S,)}; got {x_s.shape}, {y_s.shape}, {v.shape}")
    return float(x_s @ (instance.costs[s] + instance.discount * (y_s @ v)))


def payoff_all(costs, discount, x, y, v):
    """Vectorized ``F^{x,y}(v)`` over all states."""
    return np.einsum("sa,sa->s", x, costs + discount * (y @ v))


def policy_value(instance: RobustMdpInstance, x, y) -> np.ndarray:
    """Value of policy ``x`` under kernel ``y``: solves ``(I - discount P) v = c_x``."""
    S, A = instance.num_states, instance.num_actions
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (S, A) or y.shape != (S, A, S):
        raise StructuralError(f"expected x {(S, A)} and y {(S, A, S)}; got {x.shape} and {y.shape}")
    c_x = np.einsum("sa,sa->s", x, instance.costs)
    P = np.einsum("sa,sat->st", x, y)
    lam = instance.discount
    if S <= DENSE_SOLVE_LIMIT:
        return np.linalg.solve(np.eye(S) - lam * P, c_x)
    v = np.zeros(S)
    while True:
        nxt = c_x + lam * (P @ v)
        if np.max(np.abs(nxt - v)) <= 1e-10 * (1.0 - lam):
            return nxt
        v = nxt


def return_value(instance: RobustMdpInstance, v) -> float:
    """Scalarize a value vector against the initial distribution."""
    return float(instance.initial_distribution @ np.asarray(v, dtype=float))
