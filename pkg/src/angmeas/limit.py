"""Simulation of the Gaussian limit of the empirical angular measure.

The white noise ``W_Lambda`` is realized on a partition of the quadrant:

* an ``R x R`` grid of cells on ``[0, M]^2``;
* column strips ``(x_i, x_{i+1}] x (M, inf)`` and row strips
  ``(M, inf) x (y_j, y_{j+1}]`` carrying the exact leftover masses.

Each cell or strip is further split into *atoms* along the nested regions
``C_{p,theta_0} ⊂ C_{p,theta_1} ⊂ ...`` of the angle grid the partition is
built for. One independent ``N(0, mass)`` variable per atom makes
``W_Lambda(C_{p,theta_l})`` exact on the grid angles, and the column/row sums
give the marginal processes ``W_1, W_2`` exactly at grid lines.

Grid lines are graded toward the axes and include ``x = 1``. Point queries
of ``W_j`` between grid lines return the left grid value. Inside the drift
integrals ``W_j`` is interpolated linearly between grid lines (second-order
accurate against the ``1/x`` weights) and clamped at ``W_j(M)`` beyond the
grid. The drift ``Z_p(theta)`` is therefore linear in ``(W_1, W_2)`` at the
grid lines and is evaluated as a dot product with cached weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from ._kernels import field_reduce
from .geometry import HALF_PI, check_p, check_theta, cot_angle, tan_angle, x_p, y_p, y_p_offset
from .model import quad

_GL_X, _GL_W = leggauss(16)
MASS_ATOL = 1e-8
DEFAULT_GRADING = 3.0
DEFAULT_ANGLES = (math.pi / 16, math.pi / 8, math.pi / 4, 3 * math.pi / 8, 7 * math.pi / 16, HALF_PI)


class ResolutionError(ValueError):
    """The truncated grid cannot represent the requested sets within tolerance."""


GRID_ANCHORS = (0.5, 1.0, 2.0, 5.0, 10.0, 20.0)


@lru_cache(maxsize=32)
def grid_edges(M, resolution, grading=DEFAULT_GRADING):
    """Grid lines ``M (i/R)**grading`` with the nearest lines moved onto :data:`GRID_ANCHORS`.

    Grading toward the origin keeps the drift integrals accurate against their
    ``1/x`` weights near the axes. Anchors make ``W_j`` exact at those abscissas;
    the line at 1 is required for the max-norm drift.
    """
    if grading < 1.0:
        raise ResolutionError("grading must be >= 1")
    R = int(resolution)
    e = float(M) * (np.arange(R + 1) / R) ** float(grading)
    taken = {0, R}
    for a in GRID_ANCHORS:
        if not (0.0 < a < M):
            continue
        free = [i for i in range(1, R) if i not in taken]
        if not free:
            break
        i = min(free, key=lambda j: abs(e[j] - a))
        if e[i - 1] < a < e[i + 1] if 0 < i < R else False:
            e[i] = a
            taken.add(i)
    e.setflags(write=False)
    return e


def field_seed(master, index):
    """Independent per-field stream: counter-based child of the master seed."""
    return np.random.SeedSequence(int(master), spawn_key=(int(index),))


# ---------------------------------------------------------------------------
# masses of column pieces intersected with C_{p,theta}
# ---------------------------------------------------------------------------


class _ColumnMass:
    """``F(x0, x1, y) = Lambda(((x0, x1] x (0, y]) ∩ C_{p,theta})`` for one angle."""

    def __init__(self, model, theta, p):
        self.m = model
        self.p = p
        self.theta = theta
        self.t = tan_angle(theta)
        self.xp = float(x_p(theta, p))
        self.ray_dens = float(model.col_density(1.0, self.t))

    def R(self, x, y):
        if x <= 0.0 or y <= 0.0:
            return 0.0
        return float(self.m.rect_mass(x, y))

    def curve_int(self, s, c):
        """``int_s^c col_density(x, y_p(x)) dx`` on ``[s, c] ⊂ [1, inf]``."""
        if c <= s:
            return 0.0
        m, p = self.m, self.p
        if math.isinf(c):
            f = lambda u: float(m.col_density(s / u, float(y_p(s / u, p)))) * s / (u * u) if u > 0 else 0.0  # noqa: E731
            return quad(f, 0.0, 1.0, what=f"curve tail theta={self.theta}")
        if s - 1.0 < 2.0 * (c - s):
            q = p

            def g(w):
                if w <= 0:
                    return 0.0
                d = w**q
                return float(m.col_density(1.0 + d, y_p_offset(d, p))) * q * w ** (q - 1.0)

            lo = (s - 1.0) ** (1.0 / q)
            hi = (c - 1.0) ** (1.0 / q)
            return quad(g, lo, hi, what=f"curve piece theta={self.theta}")
        half, mid = 0.5 * (c - s), 0.5 * (c + s)
        x = mid + half * _GL_X
        return half * float(np.dot(_GL_W, m.col_density(x, y_p(x, p))))

    def __call__(self, x0, x1, y):
        if self.theta == 0.0 or x1 <= x0 or y <= 0.0:
            return 0.0
        total = 0.0
        # ray part: [x0, min(x1, xp)]
        a, c = x0, min(x1, self.xp)
        if c > a:
            if math.isinf(self.t):
                total += self.R(c, y) - self.R(a, y)
            else:
                cut = min(c, max(a, y / self.t))
                total += self.ray_dens * (cut - a) + (self.R(c, y) - self.R(cut, y) if c > cut else 0.0)
        # curve part: [max(x0, xp), x1]
        a, c = max(x0, self.xp), x1
        if c > a:
            if self.p == math.inf:
                yy = min(1.0, y)
                total += self.R(c, yy) - self.R(a, yy)
            else:
                s = min(max(float(y_p(y, self.p)), a), c)
                if s > a:
                    total += self.R(s, y) - self.R(a, y)
                total += self.curve_int(s, c)
        return total


# ---------------------------------------------------------------------------
# partition
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FieldPartition:
    model: object
    p: float
    M: float
    resolution: int
    grading: float
    angles: tuple
    edges: np.ndarray
    col: np.ndarray
    row: np.ndarray
    level: np.ndarray
    mass: np.ndarray

    @property
    def n_atoms(self):
        return self.mass.size

    @property
    def scale(self):
        return np.sqrt(self.mass)

    def level_index(self, theta):
        for i, a in enumerate(self.angles):
            if abs(a - theta) <= 1e-12:
                return i
        raise ValueError(f"theta={theta!r} is not in the partition angle grid {self.angles}")


def _cell_levels(model, p, edges, angles):
    """Per column: cumulative masses of ``cell ∩ C_l`` for every row and level."""
    R = edges.size - 1
    M = float(edges[-1])
    ys = np.append(edges, np.inf)  # row lines plus the strip top
    cms = [_ColumnMass(model, th, p) for th in angles]
    cols = []
    for i in range(R + 1):
        x0, x1 = (float(edges[i]), float(edges[i + 1])) if i < R else (M, math.inf)
        F = np.empty((len(angles), ys.size))
        for li, cm in enumerate(cms):
            F[li] = _column_cumulative(cm, x0, x1, ys, i == R)
        cols.append(np.diff(F, axis=1))  # (levels, R+1) rows incl. top strip
    return cols


def _column_cumulative(cm, x0, x1, ys, far):
    """``F(x0, x1, y)`` at all row lines, evaluating only where the bound cuts the column."""
    out = np.zeros(ys.size)
    if cm.theta == 0.0:
        return out
    bmax = _bound_max(cm, x0, x1)
    bmin = _bound_min(cm, x0, x1)
    inside = (ys <= bmin) & np.isfinite(ys)
    if inside.any():
        yi = ys[inside]
        left = cm.m.rect_mass(x0, yi) if x0 > 0 else 0.0
        out[inside] = cm.m.rect_mass(np.inf if far else x1, yi) - left
    above = ~inside & (ys >= bmax)
    if above.any():
        out[above] = cm(x0, x1, math.inf)
    for j in np.flatnonzero(~inside & ~above):
        out[j] = cm(x0, x1, float(ys[j]))
    return out


def _bound(cm, x):
    if math.isinf(x):
        return 1.0 if cm.p != math.inf else 1.0
    ray = math.inf if math.isinf(cm.t) else x * cm.t
    return min(ray, float(y_p(x, cm.p)))


def _bound_max(cm, x0, x1):
    xs = [x0, x1]
    if x0 < cm.xp < x1:
        xs.append(cm.xp)
    return max(_bound(cm, x) for x in xs)


def _bound_min(cm, x0, x1):
    return min(_bound(cm, x0), _bound(cm, x1))


def build_partition(
    model, p, M=50.0, resolution=400, angles=DEFAULT_ANGLES, grading=DEFAULT_GRADING
) -> FieldPartition:
    """Atoms of the grid/strip partition refined by the nested regions at ``angles``."""
    return _build_cached(model, check_p(p), float(M), int(resolution), float(grading), _angle_key(angles))


def _angle_key(angles):
    th = np.unique(np.append(check_theta(np.asarray(angles, dtype=float)), HALF_PI))
    return tuple(float(a) for a in th)


@lru_cache(maxsize=8)
def _build_cached(model, p, M, resolution, grading, angles):
    if resolution < 1:
        raise ResolutionError("resolution must be at least 1")
    if not (M > 1.0) or float(y_p(M, p)) > M:
        raise ResolutionError(f"M={M} too small: the region at pi/2 reaches the corner beyond M")
    R = resolution
    edges = grid_edges(M, R, grading)
    per_col = _cell_levels(model, p, edges, angles)
    cols, rows, levels, masses = [], [], [], []
    L = len(angles)
    for i, inc in enumerate(per_col):
        # inc[l, j] = mass of (column i, row j) ∩ C_l; j = R is the top strip
        x0, x1 = (edges[i], edges[i + 1]) if i < R else (M, math.inf)
        tot = _column_totals(model, x0, x1, edges)
        prev = np.zeros(R + 1)
        for li in range(L):
            piece = inc[li] - prev
            _push(cols, rows, levels, masses, i, piece, li, R)
            prev = inc[li]
        rest = tot - prev
        if i == R:
            rest[-1] = 0.0  # the corner (M, inf)^2 carries no atom; it misses every region used
        _push(cols, rows, levels, masses, i, rest, -1, R)
    col = np.concatenate(cols)
    row = np.concatenate(rows)
    level = np.concatenate(levels)
    mass = np.concatenate(masses)
    if np.any(mass < -MASS_ATOL):
        raise ResolutionError(f"negative atom mass {mass.min():.3e}")
    mass = np.maximum(mass, 0.0)
    keep = mass > 0.0
    part = FieldPartition(model, p, M, R, grading, angles, edges, col[keep], row[keep], level[keep], mass[keep])
    _check_margins(part)
    return part


def _column_totals(model, x0, x1, edges):
    """Masses of the cells of one column plus its top piece (``inf`` for the corner)."""
    M = float(edges[-1])
    if math.isfinite(x1):
        F = model.rect_mass(x1, edges) - (model.rect_mass(x0, edges) if x0 > 0 else 0.0)
        cells = np.diff(F)
        strip = (x1 - x0) - F[-1]
        return np.append(cells, strip)
    # row strips: (M, inf) x (y_j, y_{j+1}]
    G = edges - model.rect_mass(M, edges)
    return np.append(np.diff(G), np.inf)


def _push(cols, rows, levels, masses, i, piece, li, R):
    j = np.arange(R + 1)
    col_idx = np.full(R + 1, i if i < R else -1)
    row_idx = np.where(j < R, j, -1)
    cols.append(col_idx)
    rows.append(row_idx)
    levels.append(np.full(R + 1, li))
    masses.append(piece)


def _check_margins(part):
    R = part.resolution
    width = np.diff(part.edges)
    colsum = np.bincount(part.col[part.col >= 0], part.mass[part.col >= 0], minlength=R)
    rowsum = np.bincount(part.row[part.row >= 0], part.mass[part.row >= 0], minlength=R)
    err = max(np.max(np.abs(colsum - width)), np.max(np.abs(rowsum - width)))
    if err > MASS_ATOL:
        raise ResolutionError(f"marginal mass identity violated by {err:.3e}")


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NoiseField:
    """One realization: atom Gaussians and their column/row/level reductions."""

    partition: FieldPartition
    gaussians: np.ndarray
    columns: np.ndarray
    rows: np.ndarray
    levels: np.ndarray

    @property
    def W1_grid(self):
        return np.concatenate([[0.0], np.cumsum(self.columns)])

    @property
    def W2_grid(self):
        return np.concatenate([[0.0], np.cumsum(self.rows)])


def _reduce(part, z):
    R = part.resolution
    return field_reduce(z, part.scale, part.col, part.row, part.level, R, R, len(part.angles))


def simulate_field(
    model, p, M=50.0, resolution=400, seed=0, angles=DEFAULT_ANGLES, grading=DEFAULT_GRADING
) -> NoiseField:
    part = build_partition(model, p, M, resolution, angles, grading)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    z = np.random.default_rng(ss).standard_normal(part.n_atoms)
    cols, rows, levels = _reduce(part, z[None, :])
    return NoiseField(part, z * part.scale, cols[0], rows[0], levels[0])


def simulate_reduced(part: FieldPartition, master_seed, indices, chunk=32):
    """Column, row and level sums for fields ``indices`` (seeded by :func:`field_seed`)."""
    indices = list(indices)
    R, L = part.resolution, len(part.angles)
    cols = np.empty((len(indices), R))
    rows = np.empty((len(indices), R))
    levels = np.empty((len(indices), L))
    for start in range(0, len(indices), chunk):
        block = indices[start : start + chunk]
        z = np.empty((len(block), part.n_atoms))
        for r, idx in enumerate(block):
            z[r] = np.random.default_rng(field_seed(master_seed, idx)).standard_normal(part.n_atoms)
        c, w, lv = _reduce(part, z)
        cols[start : start + len(block)] = c
        rows[start : start + len(block)] = w
        levels[start : start + len(block)] = lv
    return cols, rows, levels


def w_lambda_from_levels(levels, part, theta):
    """``W_Lambda(C_{p,theta})`` from level sums (last axis) for a grid angle."""
    if float(theta) == 0.0:
        return np.zeros(np.shape(levels)[:-1]) if np.ndim(levels) > 1 else 0.0
    li = part.level_index(float(theta))
    return np.sum(np.asarray(levels)[..., : li + 1], axis=-1)


def w_lambda_of_set(field: NoiseField, theta, p):
    """``W_Lambda(C_{p,theta})`` for an angle of the field's grid (``0`` gives ``0``)."""
    if check_p(p) != field.partition.p:
        raise ValueError("field was built for a different p")
    theta = float(check_theta(theta))
    return float(w_lambda_from_levels(field.levels, field.partition, theta))


def marginal_W(field: NoiseField, j, x):
    """``W_j(x)``: left grid value, exact variance ``x`` at grid lines."""
    part = field.partition
    x = float(x)
    if x < 0 or x > part.M:
        raise ValueError(f"x must lie in [0, M={part.M}]")
    grid = field.W1_grid if j == 1 else field.W2_grid if j == 2 else None
    if grid is None:
        raise ValueError("j must be 1 or 2")
    i = int(np.searchsorted(part.edges, x * (1.0 + 1e-13), side="right")) - 1
    return float(grid[i])


# ---------------------------------------------------------------------------
# drift Z_p
# ---------------------------------------------------------------------------


def _hat_split(edges):
    """Piece bounds ``[g_i, g_{i+1})`` for ``i = 0..R`` with the last piece ``[M, inf)``."""
    return edges, np.append(edges[1:], np.inf)


def _log_weights(edges, b):
    """Weights ``w`` with ``int_0^b W(x)/x dx = w · W_grid`` for ``W`` linear between grid lines.

    ``W`` is interpolated linearly on ``[g_i, g_{i+1}]`` (``W(0) = 0``) and
    clamped at ``W(M)`` beyond the grid.
    """
    w = np.zeros(edges.size)
    if b <= 0:
        return w
    lo_all, hi_all = _hat_split(edges)
    for i in range(edges.size):
        lo, hi = float(lo_all[i]), float(hi_all[i])
        top = min(hi, b)
        if top <= lo:
            break
        if math.isinf(hi):
            w[i] += math.log(top / lo)
            continue
        h = hi - lo
        if lo == 0.0:
            w[i + 1] += top / h
            continue
        lg = math.log(top / lo)
        w[i] += (hi * lg - (top - lo)) / h
        w[i + 1] += ((top - lo) - lo * lg) / h
    return w


def _piece_weights(f, edges, lo_cut, hi_cut, p):
    """Weights ``w`` with ``int f(x) W(x) dx = w · W_grid`` over ``[lo_cut, hi_cut]``.

    ``f`` is integrated against the two hat functions of each grid piece; pieces
    touching ``x = 1`` use the substitution ``x = 1 + u**p``.
    """
    w = np.zeros(edges.size)
    lo_all, hi_all = _hat_split(edges)
    for i in range(edges.size):
        g0, g1 = float(lo_all[i]), float(hi_all[i])
        a, b = max(g0, lo_cut), min(g1, hi_cut)
        if b <= a:
            continue
        if math.isinf(g1):
            if math.isinf(b):
                val = quad(lambda u: float(f(a / u)) * a / (u * u) if u > 0 else 0.0, 0.0, 1.0, what="Z tail")
            else:
                val = _piece_quad(f, a, b, p, lambda x: 1.0)
            w[i] += val
            continue
        h = g1 - g0
        right = lambda x: (x - g0) / h  # noqa: E731
        left = lambda x: (g1 - x) / h  # noqa: E731
        if (a - 1.0) < 2.0 * (b - a):
            w[i] += _piece_quad(f, a, b, p, left)
            w[i + 1] += _piece_quad(f, a, b, p, right)
        else:
            half, mid = 0.5 * (b - a), 0.5 * (b + a)
            x = mid + half * _GL_X
            fx = f(x) * _GL_W * half
            w[i] += float(np.dot(fx, (g1 - x) / h))
            w[i + 1] += float(np.dot(fx, (x - g0) / h))
    return w


def _piece_quad(f, a, b, p, hat):
    if a > 1.0:
        return quad(lambda x: float(f(x)) * hat(x), a, b, what="Z piece")

    def g(u):
        if u <= 0:
            return 0.0
        d = u**p
        val = float(f(1.0 + d, d)) * hat(1.0 + d) * p * u ** (p - 1.0)
        return val if math.isfinite(val) else 0.0

    return quad(g, (a - 1.0) ** (1.0 / p), (b - 1.0) ** (1.0 / p), what="Z piece")


@lru_cache(maxsize=512)
def z_weights(model, p, M, resolution, theta, grading=DEFAULT_GRADING):
    """``(a1, a2)`` with ``Z_p(theta) = a1 · W1_grid + a2 · W2_grid``."""
    p = check_p(p)
    edges = grid_edges(M, resolution, grading)
    a1 = np.zeros(edges.size)
    a2 = np.zeros(edges.size)
    if theta == 0.0:
        return a1, a2
    t = float(tan_angle(theta))
    c = float(cot_angle(theta))
    xp = float(x_p(theta, p))
    lam = model.lambda_density
    # ray: lambda(cot,1) int_0^xp W1/x - lambda(1,t) int_0^{xp t} W2/y
    a1 += float(lam(c, 1.0)) * _log_weights(edges, xp)
    if math.isfinite(t):
        a2 -= float(lam(1.0, t)) * _log_weights(edges, xp * t)
    if p == math.inf:
        i1 = float(model.col_density(1.0, max(1.0, t))) - float(model.col_density(1.0, 1.0))
        i2 = 1.0 - float(model.row_density(max(1.0, c), 1.0))
        k1 = int(np.searchsorted(edges, 1.0 * (1.0 + 1e-13), side="right")) - 1
        if edges[k1] != 1.0:
            raise ResolutionError("the grid must contain the line x = 1 for p = inf")
        a1[k1] -= i1
        a2[k1] -= i2
        return a1, a2

    def g(x, d=None):
        yy = y_p(x, p) if d is None else y_p_offset(d, p)
        return lam(x, yy) * -((yy / x) ** (p + 1.0))

    # -int_{xp}^inf lambda(x, y_p(x)) W2(y_p(x)) dx = -int_1^{y_p(xp)} lambda(y_p(y), y) |y_p'(y)| W2(y) dy
    def h(y, d=None):
        xx = y_p(y, p) if d is None else y_p_offset(d, p)
        return lam(xx, y) * ((xx / y) ** (p + 1.0))

    with np.errstate(over="ignore", invalid="ignore"):
        a1 += _piece_weights(g, edges, xp, math.inf, p)
        a2 -= _piece_weights(h, edges, 1.0, float(y_p(xp, p)), p)
    a1.setflags(write=False)
    a2.setflags(write=False)
    return a1, a2


def z_from_grids(W1, W2, model, p, M, resolution, theta, grading=DEFAULT_GRADING):
    a1, a2 = z_weights(model, check_p(p), float(M), int(resolution), float(theta), float(grading))
    return np.asarray(W1) @ a1 + np.asarray(W2) @ a2


def z_p_limit(field: NoiseField, theta, p, model):
    """Drift ``Z_p(theta)`` of the limit process for one field."""
    part = field.partition
    theta = float(check_theta(theta))
    return float(
        z_from_grids(field.W1_grid, field.W2_grid, model, p, part.M, part.resolution, theta, part.grading)
    )


@dataclass(frozen=True)
class LimitPath:
    theta_grid: np.ndarray
    w_c: np.ndarray
    z: np.ndarray

    @property
    def alpha(self):
        return self.w_c + self.z


def alpha_path(field: NoiseField, theta_grid, p, model) -> LimitPath:
    """``alpha_p = W_Lambda(C_{p,.}) + Z_p`` on angles of the field's grid."""
    th = np.asarray(check_theta(theta_grid), dtype=float)
    wc = np.array([w_lambda_of_set(field, t, p) for t in th])
    z = np.array([z_p_limit(field, t, p, model) for t in th])
    return LimitPath(th, wc, z)


# ---------------------------------------------------------------------------
# variance oracle
# ---------------------------------------------------------------------------


def alpha_variance(theta, p, model, include_set=True):
    """``Var(alpha_p(theta))`` (or ``Var(Z_p(theta))``) by quadrature.

    Writes ``alpha = int (1_C(u) + A(u_1) + B(u_2)) dW_Lambda(u)`` where
    ``Z = int a W_1 + int b W_2``, ``A(s) = int_s^inf a``, ``B(s) = int_s^inf b``,
    so the variance is ``int (1_C + A + B)^2 dLambda`` expanded into one- and
    two-dimensional integrals with uniform-margin reductions.
    """
    p = check_p(p)
    theta = float(check_theta(theta))
    if theta == 0.0:
        return 0.0
    t = float(tan_angle(theta))
    c = float(cot_angle(theta))
    xp = float(x_p(theta, p))
    lam = model.lambda_density
    ray1 = float(lam(c, 1.0))  # a(x) = ray1 / x on (0, xp)
    ray2 = 0.0 if math.isinf(t) else float(lam(1.0, t))  # b(y) = -ray2 / y on (0, xp t)
    ytop = math.inf if math.isinf(t) else xp * t

    if p == math.inf:
        at1 = -(float(model.col_density(1.0, max(1.0, t))) - float(model.col_density(1.0, 1.0)))
        at2 = -(1.0 - float(model.row_density(max(1.0, c), 1.0)))

        def a_curve(x):
            return 0.0

        def b_curve(y):
            return 0.0
    else:
        at1 = at2 = 0.0

        def a_curve(x):
            if x <= xp:
                return 0.0
            yy = float(y_p(x, p))
            return float(lam(x, yy)) * -((yy / x) ** (p + 1.0))

        def b_curve(y):
            if y <= 1.0 or y >= ytop:
                return 0.0
            xx = float(y_p(y, p))
            return -float(lam(xx, y)) * (xx / y) ** (p + 1.0)

    def a_dens(x):
        return (ray1 / x if x < xp else 0.0) + a_curve(x)

    def b_dens(y):
        return (-ray2 / y if y < ytop else 0.0) + b_curve(y)

    def tail_int(f, s, brk):
        pts = sorted(v for v in brk if s < v < math.inf)
        lo, total = s, 0.0
        for v in pts:
            total += quad(f, lo, v, epsabs=1e-10, epsrel=1e-10, what="oracle")
            lo = v
        return total + (quad(f, lo, math.inf, epsabs=1e-10, epsrel=1e-10, what="oracle") if lo < math.inf else 0.0)

    curve_a = (lambda s: tail_int(a_curve, max(s, xp), [2.0, 10.0])) if p != math.inf else (lambda s: 0.0)

    @lru_cache(maxsize=None)
    def A(s):
        out = (ray1 * math.log(xp / s) if s < xp else 0.0) + curve_a(s)
        return out + (at1 if s <= 1.0 else 0.0)

    def curve_b(s):
        if p == math.inf:
            return 0.0
        lo = max(s, 1.0)
        if lo >= ytop:
            return 0.0
        return quad(b_curve, lo, ytop, epsabs=1e-10, epsrel=1e-10, what="oracle") if math.isfinite(ytop) else (
            tail_int(b_curve, lo, [2.0, 10.0])
        )

    @lru_cache(maxsize=None)
    def B(s):
        out = (-ray2 * math.log(ytop / s) if (ray2 != 0.0 and s < ytop) else 0.0) + curve_b(s)
        return out + (at2 if s <= 1.0 else 0.0)

    kx = [1.0, xp]
    ky = [1.0] + ([ytop] if math.isfinite(ytop) else [])
    opts = dict(epsabs=1e-9, epsrel=1e-9)
    var = 0.0
    var += _half_line(lambda s: A(s) ** 2, kx, opts)
    var += _half_line(lambda s: B(s) ** 2, ky, opts)

    # cross term 2 E[int a W1 * int b W2] = 2 iint a(x) b(y) R(x, y) plus atom terms
    def inner(x):
        f = lambda y: b_dens(y) * float(model.rect_mass(x, y))  # noqa: E731
        val = _half_line(f, ky, opts)
        return val + at2 * float(model.rect_mass(x, 1.0))

    cross = _half_line(lambda x: a_dens(x) * inner(x), kx, opts) + at1 * inner(1.0)
    var += 2.0 * cross
    if include_set:
        phi = float(model.angular_cdf_Phi(theta, p))
        var += phi
        # 2 int_C A(u1) dLambda: column masses of C
        def colmass(x):
            b = min(x * t if math.isfinite(t) else math.inf, float(y_p(x, p)))
            return float(model.col_density(x, b))

        var += 2.0 * _half_line(lambda x: A(x) * colmass(x), kx + [1.0], opts)

        def rowmass(y):
            right = float(y_p(y, p))
            left = 0.0 if math.isinf(t) else y / t
            if right <= left:
                return 0.0
            return float(model.row_density(right, y)) - float(model.row_density(left, y))

        var += 2.0 * _half_line(lambda y: B(y) * rowmass(y), ky + [1.0], opts)
    return var


def _half_line(f, knots, opts):
    pts = sorted({float(k) for k in knots if 0.0 < k < math.inf})
    edges = [0.0] + pts
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        total += quad(f, lo, hi, what="oracle", **opts)
    last = edges[-1]
    total += quad(f, last, math.inf, what="oracle", **opts)
    return total


__all__ = [
    "DEFAULT_ANGLES",
    "FieldPartition",
    "LimitPath",
    "NoiseField",
    "GRID_ANCHORS",
    "ResolutionError",
    "alpha_path",
    "alpha_variance",
    "build_partition",
    "field_seed",
    "grid_edges",
    "marginal_W",
    "simulate_field",
    "simulate_reduced",
    "w_lambda_from_levels",
    "w_lambda_of_set",
    "z_from_grids",
    "z_p_limit",
    "z_weights",
]
