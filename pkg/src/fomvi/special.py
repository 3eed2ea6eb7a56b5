"""Principal-branch Lambert W on the non-negative reals, and its log-argument form.

``lambert_w(z)`` solves ``w * exp(w) = z`` for ``z >= 0``.  The entropy prox
steps need ``W(exp(L))`` for ``L`` far outside the range where ``exp(L)`` is
representable, so ``wright_omega(L)`` solves ``w + log(w) = L`` directly.
Both use Halley's iteration from a branch-appropriate starting point.
"""

import numpy as np

_HALLEY_ITERS = 60


def lambert_w(z):
    """Principal branch of the Lambert W function for ``z >= 0``.

    Accepts scalars or arrays; scalars come back as Python floats.
    """
    scalar = np.ndim(z) == 0
    z = np.asarray(z, dtype=float)
    if np.any(np.isnan(z)) or np.any(z < 0):
        raise ValueError("lambert_w is only defined here for z >= 0")
    z_ = np.atleast_1d(z)
    # log1p(z) is a good start below e, log z - log log z above
    big = z_ > np.e
    with np.errstate(divide="ignore", invalid="ignore"):
        lz = np.log(np.where(big, z_, np.e))
        w = np.where(big, lz - np.log(lz), np.log1p(z_) * (1.0 - np.log1p(np.log1p(z_)) / (2.0 + np.log1p(z_))))
    w = np.where(z_ == 0, 0.0, w)
    todo = (z_ > 0) & np.isfinite(z_)
    for _ in range(_HALLEY_ITERS):
        if not todo.any():
            break
        ew = np.exp(w)
        f = w * ew - z_
        wp1 = w + 1.0
        dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        dw = np.where(todo, dw, 0.0)
        w = w - dw
        todo &= np.abs(dw) > 4e-16 * (1.0 + np.abs(w))
    w = np.where(np.isinf(z_), np.inf, w)
    out = w.reshape(z.shape)
    return float(out) if scalar else out


def wright_omega(x):
    """``W(exp(x))`` for real ``x``: the solution of ``w + log(w) = x``, ``w > 0``.

    Iterates on ``u = log(w)``, i.e. ``u + exp(u) = x``, which stays well
    conditioned for very negative and very positive ``x`` alike.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x_ = np.atleast_1d(x)
    finite = np.isfinite(x_)
    xs = np.where(finite, x_, 0.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        big = np.log(np.maximum(xs - np.log(np.maximum(xs, 1.0)), 0.5))
        u = np.where(xs < 1.0, xs - np.exp(np.minimum(xs, 1.0)) * 0.5, big)
        todo = finite.copy()
        for _ in range(_HALLEY_ITERS):
            if not todo.any():
                break
            eu = np.exp(u)
            g = u + eu - xs
            gp = 1.0 + eu
            du = g / (gp - 0.5 * g * eu / gp)
            du = np.where(todo, du, 0.0)
            u = u - du
            todo &= np.abs(du) > 4e-16 * np.maximum(1.0, np.abs(u))
        w = np.exp(u)
    w = np.where(np.isposinf(x_), np.inf, np.where(np.isneginf(x_), 0.0, w))
    out = w.reshape(x.shape)
    return float(out) if scalar else out
