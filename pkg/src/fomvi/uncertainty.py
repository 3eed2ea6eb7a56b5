"""s-rectangular uncertainty sets: distances, membership and linear maximization.

Two families are supported, both centred at the nominal kernel ``y0``::

    ellipsoidal:  sum_a 0.5 * ||y_a - y0_a||_2^2 <= radius
    kl:           sum_a KL(y_a || y0_a)          <= radius

Blocks are arrays of shape ``(..., A, S)``; leading axes are batch axes
(typically one entry per state), so every routine here can process all
states of an instance in one call.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleError, NumericalFailure, StructuralError
from .simplex import project_simplex_rows
from .roots import bracketed_root

KL_SUPPORT_ATOL = 0.0


class Kind(str, enum.Enum):
    ELLIPSOIDAL = "ellipsoidal"
    KL = "kl"

    @classmethod
    def parse(cls, value) -> "Kind":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        aliases = {
            "ellipsoidal": cls.ELLIPSOIDAL,
            "ellipsoid": cls.ELLIPSOIDAL,
            "l2": cls.ELLIPSOIDAL,
            "kl": cls.KL,
            "kullbackleibler": cls.KL,
            "kullback-leibler": cls.KL,
        }
        try:
            return aliases[text]
        except KeyError:
            raise ValueError(f"unknown uncertainty kind {value!r}") from None


@dataclass(frozen=True)
class UncertaintySpec:
    """Kind, radius and centre of an s-rectangular set.

    ``center`` is the full nominal kernel, shape ``(S, A, S)``; per-state
    operations index it with ``s``.
    """

    kind: Kind
    radius: float
    center: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        if not np.isfinite(self.radius) or self.radius < 0:
            raise ValueError(f"radius must be a finite non-negative number, got {self.radius}")
        object.__setattr__(self, "radius", float(self.radius))

    def block_center(self, s=None) -> np.ndarray:
        if s is None:
            return self.center
        if not 0 <= s < self.center.shape[0]:
            raise StructuralError(f"state index {s} out of range")
        return self.center[s]


def _check_block(spec, s, y):
    y = np.asarray(y, dtype=float)
    y0 = spec.block_center(s)
    if y.shape[-2:] != y0.shape[-2:]:
        raise StructuralError(f"block shape {y.shape} does not match centre {y0.shape}")
    return y, y0


def kl_rows(y, y0):
    """Row-wise KL(y || y0) over the last axis with 0*log(0/q) = 0.

    Returns ``inf`` for rows where ``y`` puts mass outside the support of ``y0``.
    """
    y = np.asarray(y, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    pos = y > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pos, y * (np.log(np.where(pos, y, 1.0)) - np.log(np.where(y0 > 0, y0, 1.0))), 0.0)
    out = terms.sum(axis=-1)
    bad = (pos & (y0 <= 0)).any(axis=-1)
    return np.where(bad, np.inf, out)


def block_distance(kind, y, y0):
    """Set distance summed over actions, for blocks of shape ``(..., A, S)``."""
    kind = Kind.parse(kind)
    if kind is Kind.ELLIPSOIDAL:
        return 0.5 * ((y - y0) ** 2).sum(axis=(-2, -1))
    return kl_rows(y, y0).sum(axis=-1)


def set_distance(spec: UncertaintySpec, s, y_s) -> float:
    """Left-hand side of the set constraint for state ``s``.

    Raises ``InfeasibleError`` for a KL block that puts mass where the
    nominal row is zero.
    """
    y, y0 = _check_block(spec, s, y_s)
    if spec.kind is Kind.KL:
        bad = np.argwhere((y > KL_SUPPORT_ATOL) & (y0 <= 0))
        if bad.size:
            a, sp = (int(i) for i in bad[0][-2:])
            raise InfeasibleError(
                f"KL distance undefined: y[{a}, {sp}] = {y[..., a, sp].max():.3g} "
                f"but nominal probability is zero (action {a}, next state {sp})"
            )
    return float(block_distance(spec.kind, y, y0))


def rows_on_simplex(y, tol) -> bool:
    y = np.asarray(y, dtype=float)
    return bool(np.all(y >= -tol) and np.all(np.abs(y.sum(axis=-1) - 1.0) <= tol))


def is_member(spec: UncertaintySpec, s, y_s, tol=1e-8) -> bool:
    """Membership of ``y_s`` in the state-``s`` set, up to ``tol``."""
    y, y0 = _check_block(spec, s, y_s)
    if not rows_on_simplex(y, tol):
        return False
    if spec.kind is Kind.KL:
        if np.any((y > tol) & (y0 <= 0)):
            return False
        y = np.where(y0 > 0, np.clip(y, 0.0, None), 0.0)
    return bool(block_distance(spec.kind, y, y0) <= spec.radius + tol)


# --------------------------------------------------------------------------
# linear maximization over the set
# --------------------------------------------------------------------------


@dataclass
class LinearMaxResult:
    y: np.ndarray
    value: np.ndarray
    upper_bound: np.ndarray
    multiplier: np.ndarray


def _face_argmax(d, support, atol):
    """Boolean mask of the maximizing coordinates of each row of ``d``."""
    masked = np.where(support, d, -np.inf)
    top = masked.max(axis=-1, keepdims=True)
    scale = np.maximum(1.0, np.abs(top))
    return support & (masked >= top - atol * scale)


def _vertex_solution(kind, d, y0, support):
    """Maximizer of <d, y> over rows of the simplex with minimal set distance.

    Returns the per-row point and its distance contribution. The maximizers
    form a face; inside it we pick the point closest to the centre.
    """
    face = _face_argmax(d, support, 1e-14)
    if kind is Kind.ELLIPSOIDAL:
        # closest point of the face simplex to y0 in Euclidean distance
        proj = project_simplex_rows(y0, mask=face)
        y = np.where(face, proj, 0.0)
        dist = 0.5 * ((y - y0) ** 2).sum(axis=-1)
    else:
        w = np.where(face, y0, 0.0)
        mass = w.sum(axis=-1, keepdims=True)
        y = w / mass
        with np.errstate(divide="ignore"):
            dist = -np.log(mass[..., 0])
    return y, dist


def _ellipsoid_max_point(d, y0, mu):
    # shifting each row by its max leaves the projection unchanged and keeps
    # the input bounded when mu is tiny
    shifted = d - d.max(axis=-1, keepdims=True)
    return project_simplex_rows(y0 + shifted / mu[..., None, None])


def _kl_max_point(d, y0, support, mu):
    logits = np.where(support, d / mu[..., None, None] + np.log(np.where(support, y0, 1.0)), -np.inf)
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=-1, keepdims=True)


def _kl_dual(d, y0, support, mu, radius):
    """Lagrange dual value mu * radius + mu * sum_a log E_y0[exp(d_a / mu)]."""
    z = np.where(support, d / mu[..., None, None], -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax[..., 0] + np.log((np.where(support, y0, 0.0) * np.exp(z - zmax)).sum(axis=-1))
    return mu * radius + mu * lse.sum(axis=-1)


def linear_max_batch(kind, radius, d, y0, tol=1e-10, max_iter=200):
    """Maximize ``<d, y>`` over the set, independently for each leading index.

    ``d`` and ``y0`` have shape ``(..., A, S)``. Returns a ``LinearMaxResult``
    whose ``upper_bound`` is a Lagrangian dual bound, so ``upper_bound -
    value`` certifies the optimality gap of the returned point.
    """
    kind = Kind.parse(kind)
    d = np.asarray(d, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    if d.shape != y0.shape:
        d = np.broadcast_to(d, y0.shape)
    if y0.ndim == 2:
        res = linear_max_batch(kind, radius, d[None], y0[None], tol, max_iter)
        return LinearMaxResult(res.y[0], res.value[0], res.upper_bound[0], res.multiplier[0])
    if not np.all(np.isfinite(d)):
        raise ValueError("direction must be finite")
    batch = d.shape[:-2]
    support = y0 > 0 if kind is Kind.KL else np.ones(y0.shape, dtype=bool)
    center_value = (d * y0).sum(axis=(-2, -1))

    if radius <= 0:
        return LinearMaxResult(y0.copy(), center_value, center_value.copy(), np.full(batch, np.inf))

    y_v, dist_v = _vertex_solution(kind, d, y0, support)
    vertex_dist = dist_v.sum(axis=-1)
    vertex_ok = vertex_dist <= radius
    y = np.where(vertex_ok[..., None, None], y_v, y0)
    mu_out = np.zeros(batch)
    need = ~vertex_ok
    if np.any(need):
        dn = d[need]
        yn = y0[need]
        sn = support[need]
        # ||d||-based bracket: at mu_hi the ellipsoid point is within the ball,
        # for KL we expand by doubling from the same scale.
        scale = np.sqrt((dn**2).sum(axis=(-2, -1)))
        scale = np.maximum(scale, 1e-300)
        if kind is Kind.ELLIPSOIDAL:
            mu_hi = scale / np.sqrt(2.0 * radius)

            def resid(mu):
                pt = _ellipsoid_max_point(dn, yn, mu)
                return 0.5 * ((pt - yn) ** 2).sum(axis=(-2, -1)) - radius
        else:
            mu_hi = scale / np.sqrt(radius)

            def resid(mu):
                pt = _kl_max_point(dn, yn, sn, mu)
                return kl_rows(pt, yn).sum(axis=-1) - radius

            for _ in range(200):
                over = resid(mu_hi) > 0
                if not over.any():
                    break
                mu_hi = np.where(over, 2.0 * mu_hi, mu_hi)
            else:
                raise NumericalFailure("KL linear maximization: multiplier bracket not found",
                                       mu_hi=float(mu_hi.max()))
        # residual is decreasing in mu; root-find on log(mu)
        lo = np.log(mu_hi) - 80.0
        hi = np.log(mu_hi)
        t = bracketed_root(lambda lm: -resid(np.exp(lm)), lo, hi, side="hi",
                           xtol=1e-13, ftol=1e-12 * max(radius, 1.0), max_iter=max_iter)
        mu = np.exp(t)
        if kind is Kind.ELLIPSOIDAL:
            pt = _ellipsoid_max_point(dn, yn, mu)
        else:
            pt = _kl_max_point(dn, yn, sn, mu)
        # the returned side may still sit a hair outside the set; pull it in
        pt = _shrink_to_set(kind, radius, pt, yn)
        y = y.copy()
        y[need] = pt
        mu_out[need] = mu

    value = (d * y).sum(axis=(-2, -1))
    upper = value.copy()
    if np.any(need):
        dn = d[need]
        yn = y0[need]
        mu = mu_out[need]
        if kind is Kind.ELLIPSOIDAL:
            pt = _ellipsoid_max_point(dn, yn, mu)
            lag = (dn * pt).sum(axis=(-2, -1)) - mu * (0.5 * ((pt - yn) ** 2).sum(axis=(-2, -1)) - radius)
        else:
            lag = _kl_dual(dn, yn, support[need], mu, radius)
        upper[need] = np.maximum(lag, value[need])
    return LinearMaxResult(y, value, upper, mu_out)


def _shrink_to_set(kind, radius, y, y0):
    """Move ``y`` toward ``y0`` just enough to satisfy the set constraint."""
    dist = block_distance(kind, y, y0)
    over = dist > radius
    if not np.any(over):
        return y
    if kind is Kind.ELLIPSOIDAL:
        theta = np.sqrt(radius / dist[over])
    else:
        # KL is convex along the segment, so theta = radius / dist is feasible
        theta = radius / dist[over]
    y = y.copy()
    y[over] = y0[over] + theta[..., None, None] * (y[over] - y0[over])
    return y


def linear_max_over_set(spec: UncertaintySpec, s, d, tol=1e-10):
    """Maximize ``<d, y_s>`` over the state-``s`` set.

    Returns ``(y_star, value)``.
    """
    d = np.asarray(d, dtype=float)
    y0 = spec.block_center(s)
    if d.shape != y0.shape:
        raise StructuralError(f"direction shape {d.shape} does not match block {y0.shape}")
    res = linear_max_batch(spec.kind, spec.radius, d, y0, tol=tol)
    return res.y, float(res.value)
