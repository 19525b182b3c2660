"""Hot inner loops, each with a numba version and a vectorized numpy version.

The public names at the bottom dispatch on :data:`angmeas._backend.USE_NUMBA`.
Both paths are importable directly (``*_numpy`` / ``*_loop``) so tests and the
benchmark can compare them.
"""

from __future__ import annotations

import math

import numpy as np

from ._backend import USE_NUMBA, njit

_NEWTON_MAXITER = 200


# --------------------------------------------------------------------------
# Conditional inversion for the symmetric logistic copula.
#
# Given s = -log(1-u) and an Exp(1) draw e, the conditional law of the second
# coordinate reduces to solving  s*(exp(a*L) - 1) + (1-a)*L = e  for L >= 0,
# with a = alpha.  The left side is increasing and convex with value -e at 0,
# so Newton started at the upper bracket e/(1-a) descends monotonically.
# --------------------------------------------------------------------------


def _check_tol(tol):
    if not (0.0 < tol < 1e-3):
        raise ValueError("tol must be in (0, 1e-3)")


@njit
def logistic_inverse_loop(s, e, alpha, tol):
    n = s.shape[0]
    out = np.empty(n)
    b = 1.0 - alpha
    for i in range(n):
        si = s[i]
        ei = e[i]
        lo = 0.0
        hi = ei / b
        x = hi
        for _ in range(_NEWTON_MAXITER):
            ex = math.exp(alpha * x)
            f = si * (ex - 1.0) + b * x - ei
            if f > 0.0:
                hi = x
            else:
                lo = x
            fp = si * alpha * ex + b
            step = f / fp
            xn = x - step
            if xn <= lo or xn >= hi:
                xn = 0.5 * (lo + hi)
            if abs(xn - x) <= tol * max(xn, 1e-300) or hi - lo <= tol * max(lo, 1e-300):
                x = xn
                break
            x = xn
        out[i] = x
    return out


def logistic_inverse_numpy(s, e, alpha, tol):
    s = np.asarray(s, dtype=float)
    e = np.asarray(e, dtype=float)
    b = 1.0 - alpha
    lo = np.zeros_like(e)
    hi = e / b
    x = hi.copy()
    active = np.ones(x.shape, dtype=bool)
    for _ in range(_NEWTON_MAXITER):
        if not active.any():
            break
        xa, sa, ea = x[active], s[active], e[active]
        ex = np.exp(alpha * xa)
        f = sa * (ex - 1.0) + b * xa - ea
        lo_a, hi_a = lo[active], hi[active]
        pos = f > 0.0
        hi_a = np.where(pos, xa, hi_a)
        lo_a = np.where(pos, lo_a, xa)
        xn = xa - f / (sa * alpha * ex + b)
        bad = (xn <= lo_a) | (xn >= hi_a)
        xn = np.where(bad, 0.5 * (lo_a + hi_a), xn)
        done = (np.abs(xn - xa) <= tol * np.maximum(xn, 1e-300)) | (
            hi_a - lo_a <= tol * np.maximum(lo_a, 1e-300)
        )
        idx = np.flatnonzero(active)
        x[idx] = xn
        lo[idx] = lo_a
        hi[idx] = hi_a
        active[idx[done]] = False
    return x


# --------------------------------------------------------------------------
# Noise-field reduction: one pass over the atoms of a partition producing the
# column sums, row sums and per-level sums of the scaled Gaussians.
# --------------------------------------------------------------------------


@njit
def field_reduce_loop(z, scale, col, row, level, ncol, nrow, nlevel):
    nf = z.shape[0]
    na = z.shape[1]
    cols = np.zeros((nf, ncol))
    rows = np.zeros((nf, nrow))
    levels = np.zeros((nf, nlevel))
    for f in range(nf):
        for a in range(na):
            g = z[f, a] * scale[a]
            c = col[a]
            if c >= 0:
                cols[f, c] += g
            r = row[a]
            if r >= 0:
                rows[f, r] += g
            lv = level[a]
            if lv >= 0:
                levels[f, lv] += g
    return cols, rows, levels


def field_reduce_numpy(z, scale, col, row, level, ncol, nrow, nlevel):
    g = z * scale[None, :]
    nf = g.shape[0]

    def _sum(idx, m):
        out = np.zeros((nf, m))
        ok = idx >= 0
        if m and ok.any():
            sel = g[:, ok]
            keys = idx[ok]
            order = np.argsort(keys, kind="stable")
            keys = keys[order]
            starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
            sums = np.add.reduceat(sel[:, order], starts, axis=1)
            out[:, keys[starts]] = sums
        return out

    return _sum(col, ncol), _sum(row, nrow), _sum(level, nlevel)


if USE_NUMBA:
    logistic_inverse = logistic_inverse_loop
    field_reduce = field_reduce_loop
else:
    logistic_inverse = logistic_inverse_numpy
    field_reduce = field_reduce_numpy
