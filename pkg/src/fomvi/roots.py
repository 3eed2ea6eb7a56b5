"""Vectorized bracketed root finding for monotone scalar functions.

Every multiplier search in the package (ball / KL multipliers, simplex
multipliers, value levels) reduces to finding the root of an increasing
function on a known bracket, once per batch entry.  The batch is solved
jointly with the Illinois variant of regula falsi, falling back to plain
bisection whenever three steps fail to halve the bracket.
"""

import numpy as np

from .errors import NumericalFailure

MAX_ITER = 200


def bracketed_root(f, lo, hi, side="hi", xtol=1e-12, ftol=0.0, max_iter=MAX_ITER, either_side=False):
    """Root of the increasing function ``f`` on ``[lo, hi]``, per batch entry.

    ``f`` maps an array of abscissae to an array of the same shape. Entries
    with ``f(lo) >= 0`` return ``lo``; entries with ``f(hi) <= 0`` return
    ``hi``. Otherwise the bracket is narrowed until ``|f| <= ftol`` at the
    requested end or the bracket is narrower than ``xtol``, and that end is
    returned: ``side="hi"`` gives the point with ``f >= 0``, ``side="lo"``
    the point with ``f <= 0``. With ``either_side`` any evaluated point with
    ``|f| <= ftol`` is accepted, whichever side of the root it lies on.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    lo, hi = np.broadcast_arrays(lo, hi)
    lo = lo.copy()
    hi = hi.copy()
    flo = np.asarray(f(lo), dtype=float)
    fhi = np.asarray(f(hi), dtype=float)
    below = flo >= 0
    above = fhi <= 0
    active = ~(below | above)
    # Illinois bookkeeping: which end was retained last time (-1 lo, +1 hi)
    kept = np.zeros(lo.shape, dtype=int)
    want_hi = side == "hi"
    hit = np.zeros(lo.shape, dtype=bool)
    # widths from the last three iterations; bisect when progress stalls
    widths = [np.full(lo.shape, np.inf)] * 3
    x_hit = np.zeros(lo.shape)

    for it in range(max_iter):
        f_side = fhi if want_hi else flo
        done = (np.abs(f_side) <= ftol) | (hi - lo <= xtol) | hit
        active &= ~done
        if not active.any():
            break
        width = hi - lo
        denom = fhi - flo
        with np.errstate(divide="ignore", invalid="ignore"):
            x = hi - fhi * width / denom
        stalled = width > 0.5 * widths[0]
        widths = widths[1:] + [width]
        bisect = stalled | ~np.isfinite(x) | (x <= lo) | (x >= hi)
        x = np.where(bisect, lo + 0.5 * width, x)
        stuck = (x <= lo) | (x >= hi)
        active &= ~stuck
        x = np.where(active, x, lo)
        fx = np.asarray(f(x), dtype=float)
        if either_side:
            new_hit = active & (np.abs(fx) <= ftol)
            x_hit = np.where(new_hit, x, x_hit)
            hit |= new_hit
        move_lo = active & (fx < 0)
        move_hi = active & (fx >= 0)
        # halve the stale end's value when the same end survives twice
        stale_hi = move_lo & (kept == 1)
        stale_lo = move_hi & (kept == -1)
        fhi = np.where(stale_hi, 0.5 * fhi, fhi)
        flo = np.where(stale_lo, 0.5 * flo, flo)
        lo = np.where(move_lo, x, lo)
        flo = np.where(move_lo, fx, flo)
        hi = np.where(move_hi, x, hi)
        fhi = np.where(move_hi, fx, fhi)
        kept = np.where(move_lo, 1, np.where(move_hi, -1, kept))
    else:
        f_side = fhi if want_hi else flo
        done = (np.abs(f_side) <= ftol) | (hi - lo <= xtol) | hit
        if np.any(active & ~done):
            bad = np.argwhere(active & ~done)[0]
            raise NumericalFailure(
                "bracketed root search did not converge",
                iterations=max_iter,
                lo=float(lo[tuple(bad)]),
                hi=float(hi[tuple(bad)]),
            )
    # Illinois scales stored f values; entries already at a bracket end keep theirs
    out = np.where(below, lo, np.where(above, hi, hi if want_hi else lo))
    return np.where(hit & ~(below | above), x_hit, out)
