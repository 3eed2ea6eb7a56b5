"""Proximal mappings for the policy and kernel players.

All kernel-side operators work on blocks of shape ``(..., A, S)`` and solve,
independently for each leading index,

    argmin_{y in P}  <g, y> + (1 / sigma) * D(y, y_prev)

where ``P`` is the s-rectangular set (ellipsoidal or KL ball intersected with
a product of simplices) and ``D`` is either ``0.5 * ||.||_2^2`` (``l2``) or
``beta * sum_a KL`` (``l1``).  The set constraint is dualized with a single
multiplier per block; each multiplier search is bracketed in a bounded
reparameterization ``t in [0, 1]`` where ``t = 1`` is the centre ``y0``.
"""

from __future__ import annotations

import enum
import functools

import numpy as np

from .errors import ConfigurationError, NumericalFailure
from .roots import bracketed_root
from .simplex import ENTROPY_FLOOR, entropy_step_rows, project_simplex_l2, project_simplex_rows, prox_simplex_entropy
from .special import wright_omega
from .uncertainty import Kind, block_distance

__all__ = [
    "NormPair",
    "project_simplex_l2",
    "prox_simplex_entropy",
    "prox_x",
    "prox_y",
    "prox_y_ellipsoid_l2",
    "prox_y_ellipsoid_l1",
    "prox_y_kl_l2",
    "prox_y_kl_l1",
    "entropy_quadratic_rows",
    "kernel_path_point",
]

# bound on |distance - radius| on the feasible side of a multiplier search
RESIDUAL_TOL = 1e-12
MAX_NEWTON = 200
# relative width of the warm-start bracket around the previous multiplier
WARM_STEP = 0.1


class NormPair(str, enum.Enum):
    L1L1 = "l1"
    L2L2 = "l2"

    @classmethod
    def parse(cls, value) -> "NormPair":
        if isinstance(value, cls):
            return value
        text = str(value).strip().lower()
        if text in ("l1", "l1l1", "ell1"):
            return cls.L1L1
        if text in ("l2", "l2l2", "ell2"):
            return cls.L2L2
        raise ValueError(f"unknown norm pair {value!r}")


def prox_x(norm, x, g, tau):
    """Policy prox step for rows of ``x`` (shape ``(..., A)``)."""
    if NormPair.parse(norm) is NormPair.L2L2:
        return project_simplex_rows(np.asarray(x) - tau * np.asarray(g))
    return entropy_step_rows(x, g, tau)


# --------------------------------------------------------------------------
# per-row solver: linear + entropy + quadratic over the simplex
# --------------------------------------------------------------------------


def entropy_quadratic_rows(h, kappa, ref, m, z, mask=None, tol=1e-14, nu0=None, return_nu=False):
    """Rows of argmin_{y in simplex} <h,y> + kappa*sum y log(y/ref) + (m/2)||y - z||^2.

    ``kappa`` and ``m`` must be positive and broadcast against the row batch
    (shape ``h.shape[:-1]``). Coordinates outside ``mask`` are fixed at 0.
    Each coordinate is a Lambert-W expression of the simplex multiplier
    ``nu``, which is found by a bracketed search on ``sum(y) = 1``.
    """
    h = np.asarray(h, dtype=float)
    if mask is None:
        mask = np.ones(h.shape, dtype=bool)
    mask = np.broadcast_to(mask, h.shape)
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), h.shape[:-1])[..., None]
    m = np.broadcast_to(np.asarray(m, dtype=float), h.shape[:-1])[..., None]
    ref = np.maximum(np.asarray(ref, dtype=float), ENTROPY_FLOOR)
    r = np.where(mask, -h + kappa * np.log(ref) - kappa + m * z, -np.inf)
    n = mask.sum(axis=-1, keepdims=True)
    log_ratio = np.log(m / kappa)

    def coords(nu):
        arg = log_ratio + (r - nu[..., None]) / kappa
        return np.where(mask, (kappa / m) * wright_omega(np.where(mask, arg, 0.0)), 0.0)

    rmax = r.max(axis=-1, keepdims=True)
    lo = (rmax - m)[..., 0]
    hi = (rmax + kappa * np.log(n) - m / n)[..., 0]
    # safeguarded Newton on log(sum(y(nu))) = 0; the sum is decreasing in nu and
    # the log keeps the step exact in the entropy-dominated (exponential) regime
    nu = 0.5 * (lo + hi)
    if nu0 is not None:
        nu = np.where((nu0 > lo) & (nu0 < hi), nu0, nu)
    for _ in range(MAX_NEWTON):
        y = coords(nu)
        total = y.sum(axis=-1)
        excess = total - 1.0
        if np.all(np.abs(excess) <= tol):
            break
        lo = np.where(excess > 0, nu, lo)
        hi = np.where(excess < 0, nu, hi)
        slope = np.where(mask, 1.0 / (kappa / np.maximum(y, ENTROPY_FLOOR) + m), 0.0).sum(axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = nu + np.log(total) * total / slope
        outside = ~((step > lo) & (step < hi))
        nu = np.where(outside, 0.5 * (lo + hi), step)
        if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(nu))):
            break
    else:
        raise NumericalFailure("simplex multiplier search did not converge", iterations=MAX_NEWTON,
                               max_excess=float(np.abs(excess).max()))
    y = coords(nu)
    y = y / y.sum(axis=-1, keepdims=True)
    return (y, nu) if return_nu else y


# --------------------------------------------------------------------------
# points along the multiplier path, y(mu)
# --------------------------------------------------------------------------


def _ell_l2_point(y_prev, g, sigma, y0, t):
    t = t[..., None, None]
    return project_simplex_rows((1.0 - t) * (y_prev - sigma * g) + t * y0)


def _ell_l1_point(y_prev, g, sigma, y0, beta, mu, memo=None):
    kappa = beta / sigma
    mu = np.broadcast_to(mu[..., None], y_prev.shape[:-1])
    return _memo_rows(memo, g, kappa, y_prev, mu, y0, None)


def _kl_l2_point(y_prev, g, sigma, y0, mu, memo=None):
    support = y0 > 0
    mu = np.broadcast_to(mu[..., None], y_prev.shape[:-1])
    return _memo_rows(memo, g, mu, y0, 1.0 / sigma, y_prev, support)


def _memo_rows(memo, h, kappa, ref, m, z, mask):
    """Row solve that reuses the last simplex multipliers kept in ``memo``."""
    if memo is None:
        return entropy_quadratic_rows(h, kappa, ref, m, z, mask=mask)
    y, nu = entropy_quadratic_rows(h, kappa, ref, m, z, mask=mask, nu0=memo.get("nu"), return_nu=True)
    memo["nu"] = nu
    return y


def _kl_l1_point(y_prev, g, sigma, y0, beta, t):
    support = y0 > 0
    t = t[..., None, None]
    logits = (1.0 - t) * (np.log(np.maximum(y_prev, ENTROPY_FLOOR)) - sigma * g / beta) + t * np.log(
        np.where(support, y0, 1.0)
    )
    logits = np.where(support, logits, -np.inf)
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=-1, keepdims=True)


def _t_to_mu(t, scale):
    with np.errstate(divide="ignore"):
        return scale * t / (1.0 - t)


def kernel_path_point(kind, norm, y_prev, g, sigma, center, mu, beta=None):
    """Unconstrained-in-the-set minimizer for a fixed set multiplier ``mu``.

    This is the inner step of every kernel prox; it is exposed so the
    monotonicity of the set distance along ``mu`` can be checked directly.
    """
    kind = Kind.parse(kind)
    norm = NormPair.parse(norm)
    y_prev, g, center = (np.asarray(a, dtype=float) for a in (y_prev, g, center))
    mu = np.asarray(mu, dtype=float) * np.ones(y_prev.shape[:-2])
    if norm is NormPair.L1L1 and beta is None:
        beta = y_prev.shape[-2] / 2.0
    if kind is Kind.ELLIPSOIDAL and norm is NormPair.L2L2:
        return _ell_l2_point(y_prev, g, sigma, center, sigma * mu / (1.0 + sigma * mu))
    if kind is Kind.ELLIPSOIDAL:
        if np.all(mu == 0):
            return entropy_step_rows(y_prev, g, sigma / beta)
        return _ell_l1_point(y_prev, g, sigma, center, beta, mu)
    if norm is NormPair.L2L2:
        if np.all(mu == 0):
            return project_simplex_rows(y_prev - sigma * g, mask=center > 0)
        return _kl_l2_point(y_prev, g, sigma, center, mu)
    return _kl_l1_point(y_prev, g, sigma, center, beta, sigma * mu / (beta + sigma * mu))


# --------------------------------------------------------------------------
# the four kernel prox operators
# --------------------------------------------------------------------------


def _prepare(y_prev, g, center):
    y_prev = np.asarray(y_prev, dtype=float)
    g = np.asarray(g, dtype=float)
    center = np.asarray(center, dtype=float)
    if y_prev.shape != center.shape or g.shape != center.shape:
        raise ValueError(f"shape mismatch: y_prev {y_prev.shape}, g {g.shape}, center {center.shape}")
    return y_prev, g, center


def _batched(fn):
    """Let a kernel prox accept a single ``(A, S)`` block as well as a batch."""

    @functools.wraps(fn)
    def wrapper(y_prev, g, sigma, center, radius, *args, **kwargs):
        if np.ndim(center) == 2:
            out = fn(np.asarray(y_prev, dtype=float)[None], np.asarray(g, dtype=float)[None], sigma,
                     np.asarray(center, dtype=float)[None], radius, *args, **kwargs)
            return out[0]
        return fn(y_prev, g, sigma, center, radius, *args, **kwargs)

    return wrapper


def _constrained(kind, radius, y_free, center, point_at, stats):
    """Shared outer search: return y_free where feasible, else search t in (0, 1).

    ``point_at(t, idx)`` evaluates the path point for the batch entries ``idx``.
    """
    dist = block_distance(kind, y_free, center)
    out = y_free.copy()
    need = dist > radius
    if stats is not None:
        stats["prox_calls"] = stats.get("prox_calls", 0) + 1
    if not np.any(need):
        return out
    if radius <= 0:
        out[need] = center[need]
        return out
    idx = np.nonzero(need)
    c = center[idx]
    calls = [0]

    free_res = radius - dist[idx]

    def f(t):
        # endpoints are known: t = 0 is y_free, t = 1 is the centre
        calls[0] += 1
        inner = (t > 0.0) & (t < 1.0)
        res = np.where(t <= 0.0, free_res, radius)
        if np.any(inner):
            pt = point_at(np.where(inner, t, 0.5), idx)
            res = np.where(inner, radius - block_distance(kind, pt, c), res)
        return res

    lo = np.zeros(len(idx[0]))
    hi = np.ones(len(idx[0]))
    prev = None if stats is None else stats.get("warm_t")
    if prev is not None and prev.shape == need.shape:
        # narrow the bracket around the previous call's multipliers where it still brackets
        p = prev[idx]
        known = (p > 0.0) & (p < 1.0)
        if np.any(known):
            p = np.where(known, p, 0.5)
            # multiplier mu is proportional to t / (1 - t); scale it by 1 -/+ WARM_STEP
            lo_try = (1 - WARM_STEP) * p / (1.0 - WARM_STEP * p)
            hi_try = (1 + WARM_STEP) * p / (1.0 + WARM_STEP * p)
            f_lo, f_hi = f(lo_try), f(hi_try)
            lo = np.where(known & (f_lo < 0.0), lo_try, lo)
            hi = np.where(known & (f_hi > 0.0), hi_try, hi)
    t = bracketed_root(f, lo, hi, side="hi", xtol=1e-15, ftol=RESIDUAL_TOL * max(1.0, radius))
    at_center = t >= 1.0
    pt = point_at(np.where(at_center, 0.5, t), idx)
    pt = np.where(at_center[..., None, None], c, pt)
    out[idx] = pt
    if stats is not None:
        stats["outer_evals"] = stats.get("outer_evals", 0) + calls[0]
        warm_t = np.full(need.shape, np.nan)
        warm_t[idx] = t
        stats["warm_t"] = warm_t
    return out


@_batched
def prox_y_ellipsoid_l2(y_prev, g, sigma, center, radius, tol=1e-10, stats=None):
    """Euclidean kernel prox over the ellipsoidal set.

    For a fixed ball multiplier the solution is ``A`` simplex projections of
    a convex combination of ``y_prev - sigma*g`` and the centre; the
    combination weight is searched on ``[0, 1]``.
    """
    y_prev, g, center = _prepare(y_prev, g, center)
    y_free = project_simplex_rows(y_prev - sigma * g)

    def point_at(t, idx):
        return _ell_l2_point(y_prev[idx], g[idx], sigma, center[idx], t)

    return _constrained(Kind.ELLIPSOIDAL, radius, y_free, center, point_at, stats)


@_batched
def prox_y_ellipsoid_l1(y_prev, g, sigma, center, radius, beta=None, tol=1e-10, stats=None):
    """Entropic kernel prox (``beta * sum_a KL``) over the ellipsoidal set.

    Two nested searches: the ball multiplier outside, and per action the
    simplex multiplier of a Lambert-W coordinate update inside.
    """
    y_prev, g, center = _prepare(y_prev, g, center)
    if beta is None:
        beta = y_prev.shape[-2] / 2.0
    y_prev = np.maximum(y_prev, ENTROPY_FLOOR)
    y_free = entropy_step_rows(y_prev, g, sigma / beta)
    kappa = beta / sigma

    memo = {}

    def point_at(t, idx):
        return _ell_l1_point(y_prev[idx], g[idx], sigma, center[idx], beta, _t_to_mu(t, kappa), memo)

    return _constrained(Kind.ELLIPSOIDAL, radius, y_free, center, point_at, stats)


@_batched
def prox_y_kl_l2(y_prev, g, sigma, center, radius, tol=1e-10, stats=None):
    """Euclidean kernel prox over the KL set; coordinates with ``center == 0`` stay 0."""
    y_prev, g, center = _prepare(y_prev, g, center)
    support = center > 0
    y_free = project_simplex_rows(y_prev - sigma * g, mask=support)

    memo = {}

    def point_at(t, idx):
        return _kl_l2_point(y_prev[idx], g[idx], sigma, center[idx], _t_to_mu(t, 1.0 / sigma), memo)

    return _constrained(Kind.KL, radius, y_free, center, point_at, stats)


@_batched
def prox_y_kl_l1(y_prev, g, sigma, center, radius, beta=None, tol=1e-10, stats=None):
    """Entropic kernel prox over the KL set.

    For a fixed multiplier each row is a normalized weighted geometric mean
    of ``y_prev`` and the centre, tilted by ``g``; one search on the weight.
    """
    y_prev, g, center = _prepare(y_prev, g, center)
    if beta is None:
        beta = y_prev.shape[-2] / 2.0
    support = center > 0
    y_prev = np.where(support, np.maximum(y_prev, ENTROPY_FLOOR), 0.0)
    y_free = entropy_step_rows(y_prev, g, sigma / beta, mask=support)

    def point_at(t, idx):
        return _kl_l1_point(y_prev[idx], g[idx], sigma, center[idx], beta, t)

    return _constrained(Kind.KL, radius, y_free, center, point_at, stats)


def prox_y(kind, norm, y_prev, g, sigma, center, radius, beta=None, tol=1e-10, stats=None):
    """Dispatch to the kernel prox for the (set kind, norm pair) combination."""
    kind = Kind.parse(kind)
    norm = NormPair.parse(norm)
    if kind is Kind.ELLIPSOIDAL:
        if norm is NormPair.L2L2:
            return prox_y_ellipsoid_l2(y_prev, g, sigma, center, radius, tol=tol, stats=stats)
        return prox_y_ellipsoid_l1(y_prev, g, sigma, center, radius, beta=beta, tol=tol, stats=stats)
    if norm is NormPair.L2L2:
        return prox_y_kl_l2(y_prev, g, sigma, center, radius, tol=tol, stats=stats)
    return prox_y_kl_l1(y_prev, g, sigma, center, radius, beta=beta, tol=tol, stats=stats)


def check_kl_support(y, center):
    """Raise if ``y`` has mass where the KL centre is zero."""
    if np.any((np.asarray(y) > 0) & (np.asarray(center) <= 0)):
        raise ConfigurationError("kernel iterate has mass outside the nominal support")

