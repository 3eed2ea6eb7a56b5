"""Robust Bellman oracle and value-iteration baselines.

The Bellman value of state ``s`` is computed from the max-min form

    F(v)_s = max_{y in P_s} min_a (c_sa + discount * y_sa . v),

which equals the min-max form by convex duality. The max-min form is a
one-dimensional search over the level ``mu`` of the inner minimum: for
each action, the smallest set distance that lifts ``c_sa + discount *
y_sa . v`` to ``mu`` is found along a projection (ellipsoid) or exponential
tilting (KL) path, and the largest level whose total distance fits in the
radius is ``F(v)_s``. The policy row is recovered from the per-action path
multipliers, and a duality gap certifies the result; a static primal-dual
solve takes over for the rare states where the certificate is too loose.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import RobustMdpInstance, apply_K_transpose
from .prox import prox_y
from .roots import bracketed_root
from .simplex import project_simplex_rows
from .uncertainty import Kind, block_distance, linear_max_batch

__all__ = [
    "BellmanResult",
    "BellmanBatch",
    "robust_bellman",
    "bellman_batch",
    "bellman_operator",
    "ViResult",
    "stopping_threshold",
    "inner_tolerance",
    "vi_robust",
    "gs_vi",
    "avi",
    "avi_step_sizes",
    "anderson_vi",
    "anderson_weights",
    "static_pda",
]


# relative residual accepted by the level and distance searches
LEVEL_FTOL = 1e-12


@dataclass
class BellmanResult:
    value: float
    x: np.ndarray
    y: np.ndarray
    gap: float
    lower: float
    converged: bool = True


@dataclass
class BellmanBatch:
    values: np.ndarray
    x: np.ndarray
    y: np.ndarray
    gaps: np.ndarray
    lower: np.ndarray
    converged: np.ndarray


# ---------------------------------------------------------------------------
# minimal distance to reach a level, per (state, action)
# ---------------------------------------------------------------------------


def _path_point(kind, y0, support, v, eta):
    """Distance-minimizing kernel rows tilted toward ``v`` with strength ``eta``."""
    vmax = np.where(support, v, -np.inf).max(axis=-1, keepdims=True)
    if kind is Kind.ELLIPSOIDAL:
        return project_simplex_rows(y0 + eta[..., None] * (v - vmax))
    logits = np.where(support, np.log(np.where(support, y0, 1.0)) + eta[..., None] * (v - vmax), -np.inf)
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=-1, keepdims=True)


def _vertex_rows(kind, y0, support, v):
    """Rows maximizing ``y . v`` with least distance to ``y0``, and that distance."""
    masked = np.where(support, v, -np.inf)
    top = masked.max(axis=-1, keepdims=True)
    face = support & (masked >= top - 1e-14 * np.maximum(1.0, np.abs(top)))
    if kind is Kind.ELLIPSOIDAL:
        y = project_simplex_rows(y0, mask=face)
        return y, 0.5 * ((y - y0) ** 2).sum(axis=-1)
    w = np.where(face, y0, 0.0)
    mass = w.sum(axis=-1)
    return w / mass[..., None], -np.log(mass)


class _LevelCosts:
    """Minimal per-action distance ``D_a(mu)`` for a batch of states."""

    def __init__(self, kind, costs, y0, v, discount):
        self.kind = kind
        self.costs = costs  # (B, A)
        self.y0 = y0  # (B, A, S)
        self.v = v
        self.lam = discount
        self.support = y0 > 0 if kind is Kind.KL else np.ones(y0.shape, dtype=bool)
        spread = float(v.max() - v.min())
        self.eta_scale = 1.0 / max(spread, 1e-300)
        self.base = costs + discount * (y0 @ v)
        self.y_top, self.d_top = _vertex_rows(kind, y0, self.support, v)
        self.top = costs + discount * (self.y_top @ v)

        if kind is Kind.ELLIPSOIDAL:
            # the projection path reaches the top face once eta * gap >= 2,
            # where gap separates the top value of v from the rest
            below = np.where(v < v.max() - 1e-14 * max(1.0, abs(v.max())), v, -np.inf).max()
            gap = v.max() - below if np.isfinite(below) else spread
            self.eta_max = 2.0 / max(gap, 1e-300)

    def _eta(self, t):
        """Path strength at parameter ``t in [0, 1]``; ``t = 1`` is the vertex row."""
        if self.kind is Kind.ELLIPSOIDAL:
            return t * self.eta_max
        inner = t < 1.0
        return np.where(inner, t / np.where(inner, 1.0 - t, 1.0), 0.0) * self.eta_scale

    def _rows(self, t):
        y = _path_point(self.kind, self.y0, self.support, self.v, self._eta(t))
        return np.where((t < 1.0)[..., None], y, self.y_top)

    def solve(self, mu):
        """Rows, distances and path parameters that reach level ``mu`` (shape ``(B,)``)."""
        target = mu[:, None] - self.costs

        def f(t):
            return self.lam * (self._rows(t) @ self.v) - target

        lo = np.zeros(self.base.shape)
        hi = np.ones(self.base.shape)
        t = bracketed_root(f, lo, hi, side="hi", xtol=1e-15, ftol=LEVEL_FTOL * (1.0 + np.abs(target)),
                           either_side=True)
        rows = self._rows(t)
        dist = block_distance(self.kind, rows[..., None, :], self.y0[..., None, :])
        dist = np.where(t <= 0.0, 0.0, dist)
        unreachable = mu[:, None] > self.top * (1 + 1e-15) + 1e-300
        dist = np.where(unreachable, np.inf, dist)
        return rows, dist, t


def _maxmin_batch(instance: RobustMdpInstance, v, states):
    kind = instance.uncertainty_kind
    radius = instance.radius
    lam = instance.discount
    c = instance.costs[states]
    y0 = instance.nominal_kernel[states]
    B, A = c.shape
    base = c + lam * (y0 @ v)
    lo = base.min(axis=1)
    if radius <= 0 or lam == 0 or np.ptp(v) == 0:
        x = np.zeros((B, A))
        x[np.arange(B), base.argmin(axis=1)] = 1.0
        return x, y0.copy(), lo
    level = _LevelCosts(kind, c, y0, v, lam)
    hi = level.top.min(axis=1)

    def phi(mu):
        _, dist, _ = level.solve(mu)
        return dist.sum(axis=1) - radius

    hi = np.maximum(hi, lo)
    mu = bracketed_root(phi, lo, hi, side="lo", xtol=1e-13 * max(1.0, float(np.abs(hi).max())),
                        ftol=LEVEL_FTOL * max(1.0, radius))
    rows, dist, t = level.solve(mu)
    # radius slack at the highest reachable level: the bottleneck actions sit
    # at their vertex rows and the policy concentrates on them
    capped = (mu >= hi) & (dist.sum(axis=1) <= radius)
    bottleneck = capped[:, None] & (level.top <= hi[:, None])
    t = np.where(bottleneck, 1.0, t)
    rows = np.where(bottleneck[..., None], level.y_top, rows)
    y = np.where((t > 0)[..., None], rows, y0)
    # policy weights are proportional to the per-action path multipliers
    with np.errstate(invalid="ignore"):
        eta = level._eta(t)
    eta = np.where(t >= 1.0, np.inf, eta) if kind is Kind.KL else eta
    x = np.where(capped[:, None], bottleneck.astype(float), eta)
    infinite = np.isinf(x)
    x = np.where(infinite.any(axis=1, keepdims=True), infinite.astype(float), x)
    total = x.sum(axis=1, keepdims=True)
    q = c + lam * (y @ v)
    pure = np.zeros((B, A))
    pure[np.arange(B), q.argmin(axis=1)] = 1.0
    x = np.where(total > 0, x / np.where(total > 0, total, 1.0), pure)
    return x, y, q.min(axis=1)


def _certify(instance, v, states, x, y):
    """Primal best-response value, its dual upper bound, and the lower bound from ``y``."""
    lam = instance.discount
    c = instance.costs[states]
    y0 = instance.nominal_kernel[states]
    d = lam * x[..., None] * v
    lm = linear_max_batch(instance.uncertainty_kind, instance.radius, d, y0)
    lin = (x * c).sum(axis=1)
    lower = (c + lam * (y @ v)).min(axis=1)
    return lin + lm.value, lin + lm.upper_bound, lower


def static_pda(instance, v, states, x, y, tol, max_iter=20000, check_every=50):
    """Primal-dual iterations on the fixed-``v`` saddle problems of ``states``.

    Euclidean setup with ``tau = sigma = 1 / (discount * ||v||_2)``; stops when
    the certified gap of the averaged pair is at most ``tol`` for every state.
    Returns ``(x_avg, y_avg, converged)``.
    """
    lam = instance.discount
    c = instance.costs[states]
    y0 = instance.nominal_kernel[states]
    kind, radius = instance.uncertainty_kind, instance.radius
    L = lam * float(np.linalg.norm(v))
    if L == 0:
        return x, y, np.ones(len(states), dtype=bool)
    tau = sigma = 0.99 / L
    xs, ys = x.copy(), y.copy()
    x_sum, y_sum = np.zeros_like(xs), np.zeros_like(ys)
    done = np.zeros(len(states), dtype=bool)
    x_out, y_out = x.copy(), y.copy()
    for it in range(1, max_iter + 1):
        x_new = project_simplex_rows(xs - tau * (c + apply_K_transpose(v, ys, lam)))
        g = -lam * (2.0 * x_new - xs)[..., None] * v
        ys = prox_y(kind, "l2", ys, g, sigma, y0, radius)
        xs = x_new
        x_sum += xs
        y_sum += ys
        if it % check_every == 0:
            xa, ya = x_sum / it, y_sum / it
            _, upper, lower = _certify(instance, v, states, xa, ya)
            ok = (upper - lower <= tol) & ~done
            x_out[ok], y_out[ok] = xa[ok], ya[ok]
            done |= ok
            if done.all():
                break
    x_out[~done], y_out[~done] = (x_sum / it)[~done], (y_sum / it)[~done]
    return x_out, y_out, done


def bellman_batch(instance: RobustMdpInstance, v, tol=1e-8, states=None, method="maxmin",
                  max_pda_iter=20000) -> BellmanBatch:
    """Certified robust Bellman update for a batch of states (all by default)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (instance.num_states,):
        raise ValueError(f"value vector must have length {instance.num_states}")
    if not np.all(np.isfinite(v)):
        raise ValueError("value vector must be finite")
    states = np.arange(instance.num_states) if states is None else np.atleast_1d(np.asarray(states, dtype=int))
    B, A = len(states), instance.num_actions
    if method == "maxmin":
        x, y, _ = _maxmin_batch(instance, v, states)
    elif method == "pda":
        x = np.full((B, A), 1.0 / A)
        y = instance.nominal_kernel[states].copy()
    else:
        raise ValueError(f"unknown Bellman method {method!r}")
    value, upper, lower = _certify(instance, v, states, x, y)
    gaps = upper - lower
    converged = gaps <= tol
    if not converged.all():
        bad = np.nonzero(~converged)[0]
        xb, yb, ok = static_pda(instance, v, states[bad], x[bad], y[bad], tol, max_iter=max_pda_iter)
        x[bad], y[bad] = xb, yb
        vb, ub, lb = _certify(instance, v, states[bad], xb, yb)
        value[bad], upper[bad], lower[bad] = vb, ub, lb
        gaps[bad] = ub - lb
        converged[bad] = ok
    return BellmanBatch(value, x, y, np.maximum(gaps, 0.0), lower, converged)


def robust_bellman(instance: RobustMdpInstance, v, s, tol=1e-8, method="maxmin") -> BellmanResult:
    """Robust Bellman update ``F(v)_s`` with its minimizing policy row and worst-case block."""
    if not 0 <= s < instance.num_states:
        raise ValueError(f"state index {s} out of range")
    b = bellman_batch(instance, v, tol=tol, states=[s], method=method)
    return BellmanResult(float(b.values[0]), b.x[0], b.y[0], float(b.gaps[0]), float(b.lower[0]),
                         bool(b.converged[0]))


def bellman_operator(instance: RobustMdpInstance, v, tol=1e-8) -> np.ndarray:
    return bellman_batch(instance, v, tol=tol).values


# ---------------------------------------------------------------------------
# value-iteration baselines
# ---------------------------------------------------------------------------


@dataclass
class ViResult:
    value: np.ndarray
    policy: np.ndarray
    kernel: np.ndarray
    trace: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    method: str = "vi"

    def __iter__(self):
        return iter((self.value, self.policy, self.kernel, self.trace))


def stopping_threshold(eps, discount):
    """Sup-norm change below which the iterate is ``eps / 2``-close to the fixed point."""
    if discount == 0:
        return np.inf
    return eps * (1.0 - discount) / (2.0 * discount)


def inner_tolerance(eps, discount):
    if discount == 0:
        return eps / 20.0
    return eps * (1.0 - discount) / (20.0 * discount)


def _check_eps(eps):
    if not eps > 0:
        raise ValueError(f"target accuracy must be positive, got {eps}")


def _finish(instance, method, v, trace, iterations, converged, tol):
    b = bellman_batch(instance, v, tol=tol)
    return ViResult(v, b.x, b.y, trace, iterations, converged, method)


def _record(trace, start, iteration, residual):
    trace.append({"iteration": iteration, "residual_inf": float(residual),
                  "elapsed_seconds": time.perf_counter() - start})


def _out_of_time(trace, max_seconds):
    return max_seconds is not None and trace[-1]["elapsed_seconds"] > max_seconds


def vi_robust(instance: RobustMdpInstance, eps, tol=None, max_iter=100000, max_seconds=None) -> ViResult:
    """Robust value iteration with Jacobi sweeps, started at ``v = 0``."""
    _check_eps(eps)
    lam = instance.discount
    tol = inner_tolerance(eps, lam) if tol is None else tol
    thr = stopping_threshold(eps, lam)
    v = np.zeros(instance.num_states)
    trace, start = [], time.perf_counter()
    for it in range(1, max_iter + 1):
        nxt = bellman_batch(instance, v, tol=tol).values
        res = float(np.max(np.abs(nxt - v)))
        v = nxt
        _record(trace, start, it, res)
        if res <= thr:
            return _finish(instance, "vi", v, trace, it, True, tol)
        if _out_of_time(trace, max_seconds):
            return _finish(instance, "vi", v, trace, it, False, tol)
    return _finish(instance, "vi", v, trace, max_iter, False, tol)


def gs_vi(instance: RobustMdpInstance, eps, tol=None, max_iter=100000, max_seconds=None) -> ViResult:
    """Gauss-Seidel robust value iteration: states are updated in place, ascending."""
    _check_eps(eps)
    lam = instance.discount
    tol = inner_tolerance(eps, lam) if tol is None else tol
    thr = stopping_threshold(eps, lam)
    v = np.zeros(instance.num_states)
    trace, start = [], time.perf_counter()
    for it in range(1, max_iter + 1):
        old = v.copy()
        for s in range(instance.num_states):
            v[s] = bellman_batch(instance, v, tol=tol, states=[s]).values[0]
        res = float(np.max(np.abs(v - old)))
        _record(trace, start, it, res)
        if res <= thr:
            return _finish(instance, "gs_vi", v, trace, it, True, tol)
        if _out_of_time(trace, max_seconds):
            return _finish(instance, "gs_vi", v, trace, it, False, tol)
    return _finish(instance, "gs_vi", v, trace, max_iter, False, tol)


def avi_step_sizes(discount):
    """Relaxation and momentum for accelerated value iteration."""
    alpha = 1.0 / (1.0 + discount)
    gamma = (1.0 - np.sqrt(1.0 - discount**2)) / discount if discount > 0 else 0.0
    return alpha, gamma


def avi(instance: RobustMdpInstance, eps, tol=None, max_iter=100000, max_seconds=None) -> ViResult:
    """Accelerated value iteration with a norm guard that falls back to plain sweeps."""
    _check_eps(eps)
    lam = instance.discount
    tol = inner_tolerance(eps, lam) if tol is None else tol
    thr = stopping_threshold(eps, lam)
    alpha, gamma = avi_step_sizes(lam)
    guard = 10.0 * instance.value_bound
    v_prev = np.zeros(instance.num_states)
    v = np.zeros(instance.num_states)
    trace, start = [], time.perf_counter()
    restarted = False
    for it in range(1, max_iter + 1):
        if restarted:
            nxt = bellman_batch(instance, v, tol=tol).values
        else:
            h = v + gamma * (v - v_prev)
            nxt = h - alpha * (h - bellman_batch(instance, h, tol=tol).values)
            if np.max(np.abs(nxt)) > guard:
                restarted = True
                nxt = bellman_batch(instance, v, tol=tol).values
        res = float(np.max(np.abs(nxt - v)))
        v_prev, v = v, nxt
        _record(trace, start, it, res)
        if restarted:
            trace[-1]["restarted"] = True
        if res <= thr:
            return _finish(instance, "avi", v, trace, it, True, tol)
        if _out_of_time(trace, max_seconds):
            return _finish(instance, "avi", v, trace, it, False, tol)
    return _finish(instance, "avi", v, trace, max_iter, False, tol)


def anderson_weights(residuals, damping=1e-10):
    """Affine weights minimizing ``||sum_i w_i r_i||_2`` with ``sum_i w_i = 1``.

    ``residuals`` has one residual per column. Returns ``None`` when the
    damped normal system cannot be solved.
    """
    G = np.asarray(residuals, dtype=float)
    k = G.shape[1]
    M = G.T @ G + damping * np.eye(k)
    try:
        z = np.linalg.solve(M, np.ones(k))
    except np.linalg.LinAlgError:
        return None
    total = z.sum()
    if not np.isfinite(total) or abs(total) < 1e-300:
        return None
    w = z / total
    return w if np.all(np.isfinite(w)) else None


def anderson_vi(instance: RobustMdpInstance, eps, m=5, tol=None, max_iter=100000,
                max_seconds=None) -> ViResult:
    """Anderson-accelerated value iteration with memory ``m``.

    Stops when the fixed-point residual ``||F(v) - v||`` falls below the
    threshold, which is the quantity plain iteration's rule measures.
    """
    _check_eps(eps)
    if m < 1:
        raise ValueError("Anderson memory must be at least 1")
    lam = instance.discount
    tol = inner_tolerance(eps, lam) if tol is None else tol
    thr = stopping_threshold(eps, lam)
    v = np.zeros(instance.num_states)
    hist_v, hist_f = [], []
    trace, start = [], time.perf_counter()
    for it in range(1, max_iter + 1):
        fv = bellman_batch(instance, v, tol=tol).values
        res = float(np.max(np.abs(fv - v)))
        _record(trace, start, it, res)
        if res <= thr:
            return _finish(instance, "anderson_vi", fv, trace, it, True, tol)
        if _out_of_time(trace, max_seconds):
            return _finish(instance, "anderson_vi", fv, trace, it, False, tol)
        hist_v.append(v)
        hist_f.append(fv)
        hist_v, hist_f = hist_v[-(m + 1):], hist_f[-(m + 1):]
        R = np.stack([f - x for f, x in zip(hist_f, hist_v)], axis=1)
        w = anderson_weights(R)
        if w is None:
            v = fv
            trace[-1]["fallback"] = True
        else:
            v = np.stack(hist_f, axis=1) @ w
    return _finish(instance, "anderson_vi", v, trace, max_iter, False, tol)
