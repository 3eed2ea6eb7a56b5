"""Simplex primitives: Euclidean projection and entropic prox step."""

import numpy as np

# probabilities below this are clamped before taking logs
ENTROPY_FLOOR = 1e-300


def project_simplex_rows(z, mask=None):
    """Euclidean projection of every row (last axis) of ``z`` onto the simplex.

    Sort-and-threshold, O(n log n) per row. With ``mask`` the projection is
    onto the face spanned by the masked coordinates; the rest are set to 0.
    Rows whose mask is empty come back as all zeros.
    """
    z = np.asarray(z, dtype=float)
    if z.shape[-1] == 0:
        raise ValueError("cannot project an empty vector onto the simplex")
    if mask is None:
        active = np.ones(z.shape, dtype=bool)
        zz = z
    else:
        active = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        zz = np.where(active, z, -np.inf)
    u = -np.sort(-zz, axis=-1)
    finite = np.isfinite(u)
    css = np.cumsum(np.where(finite, u, 0.0), axis=-1)
    k = np.arange(1, z.shape[-1] + 1, dtype=float)
    cond = finite & (u * k > css - 1.0)
    rho = cond.sum(axis=-1, keepdims=True)
    rho_idx = np.maximum(rho - 1, 0)
    theta = (np.take_along_axis(css, rho_idx, axis=-1) - 1.0) / np.maximum(rho, 1)
    out = np.maximum(z - theta, 0.0)
    return np.where(active & (rho > 0), out, 0.0)


def project_simplex_l2(z):
    """argmin over the simplex of ||x - z||_2 for a single vector ``z``."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError("expected a 1-D vector")
    if z.size == 0:
        raise ValueError("cannot project an empty vector onto the simplex")
    if not np.all(np.isfinite(z)):
        raise ValueError("vector must be finite")
    return project_simplex_rows(z)


def entropy_step_rows(x, g, step, mask=None):
    """Row-wise ``x_i * exp(-step * g_i)``, normalized; computed in log space."""
    x = np.asarray(x, dtype=float)
    logits = np.log(np.maximum(x, ENTROPY_FLOOR)) - step * np.asarray(g, dtype=float)
    if mask is not None:
        logits = np.where(mask, logits, -np.inf)
    logits = logits - logits.max(axis=-1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=-1, keepdims=True)


def prox_simplex_entropy(x, g, tau):
    """argmin over the simplex of ``<g, x'> + KL(x' || x) / tau``.

    Closed form ``x'_i ∝ x_i exp(-tau g_i)``. Entries of ``x`` below
    ``ENTROPY_FLOOR`` are clamped to it.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0 or not np.any(x > 0):
        raise ValueError("entropy prox needs a point with positive mass")
    if tau <= 0:
        raise ValueError("step size must be positive")
    return entropy_step_rows(x, g, tau)
