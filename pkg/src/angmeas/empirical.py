"""Rank-based empirical angular measure and its functional expansion.

Conventions
-----------
* Data points are ``X`` values; :func:`standardize` ranks them per margin.
  The *tail rank* of observation ``i`` in margin ``j`` is ``n + 1 - R_ij``
  (1 for the largest value), so that ``Zhat_ij = n / tail_rank``.
* When the uniform standardization ``U = 1 - F(X)`` is known (simulated data)
  it is carried in :attr:`RankedSample.u`; the tail rank then equals the
  ascending rank of ``U_ij``.
* Closed inequalities against integer rank thresholds are evaluated as
  ``rank <= floor(z * (1 + CLOSE_RTOL))`` so that exact boundary cases
  (``tan(pi/4)`` in floating point, ``1/14 + 1/35 = 1/10``) land inside.
* ``Q_jn(s) = U_(floor(n s))`` with ``U_(0) = 0`` for ``s <= 1`` and
  ``Q_jn(s) = s`` beyond; in particular ``Q_jn = 0`` on ``[0, 1/n)``. With
  this right-continuous version of the marginal quantile function, counting
  sample points in the estimated region reproduces the estimator exactly.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .geometry import (
    CLOSE_RTOL,
    HALF_PI,
    check_p,
    check_theta,
    cot_angle,
    tan_angle,
    x_p,
    y_p,
    y_p_offset,
)
from .model import QuadratureError, quad

_GL_X, _GL_W = leggauss(12)


class TieError(ValueError):
    """A margin contains duplicated values."""


class EmptyTail(ValueError):
    """No observation passes the radius cut, so the normalized measure is undefined."""


class SampleParseError(ValueError):
    """Malformed sample file; ``line`` is 1-based."""

    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


def snap_floor(z):
    """``floor(z)`` tolerant to floating error just below an integer; ``inf`` stays ``inf``."""
    z = np.asarray(z, dtype=float)
    with np.errstate(invalid="ignore"):
        out = np.floor(z * (1.0 + CLOSE_RTOL))
    return out


# ---------------------------------------------------------------------------
# ranks
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RankedSample:
    points: np.ndarray
    ranks: np.ndarray
    zhat: np.ndarray
    u: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def tail_ranks(self) -> np.ndarray:
        return self.n + 1 - self.ranks

    def swapped(self) -> "RankedSample":
        u = None if self.u is None else self.u[:, ::-1].copy()
        return RankedSample(
            self.points[:, ::-1].copy(), self.ranks[:, ::-1].copy(), self.zhat[:, ::-1].copy(), u
        )


def _ranks_1d(col, j):
    order = np.argsort(col, kind="stable")
    srt = col[order]
    dup = np.flatnonzero(srt[1:] == srt[:-1])
    if dup.size:
        raise TieError(f"tied values in margin {j + 1}: {srt[dup[0]]!r}")
    r = np.empty(col.shape[0], dtype=np.int64)
    r[order] = np.arange(1, col.shape[0] + 1)
    return r


def standardize(points, u=None) -> RankedSample:
    """Rank each margin and form ``Zhat_ij = n / (n + 1 - R_ij)``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
        raise ValueError("points must have shape (n, 2) with n >= 1")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    n = pts.shape[0]
    ranks = np.column_stack([_ranks_1d(pts[:, 0], 0), _ranks_1d(pts[:, 1], 1)])
    zhat = n / (n + 1.0 - ranks)
    if u is not None:
        u = np.asarray(u, dtype=float)
    return RankedSample(pts, ranks, zhat, u)


_DELIMS = re.compile(r"[,;\t ]+")


def parse_sample(text: str) -> np.ndarray:
    """Two numeric columns separated by commas, semicolons, tabs or spaces.

    A first line that does not parse as numbers is taken as a header. Blank
    lines and lines starting with ``#`` are skipped.
    """
    rows = []
    seen_data = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f for f in _DELIMS.split(line) if f]
        try:
            vals = [float(f) for f in fields]
        except ValueError:
            if not seen_data and not rows:
                seen_data = True  # header
                continue
            raise SampleParseError(lineno, f"non-numeric field in {raw!r}") from None
        seen_data = True
        if len(vals) != 2:
            raise SampleParseError(lineno, f"expected 2 columns, found {len(vals)}")
        if not all(math.isfinite(v) for v in vals):
            raise SampleParseError(lineno, "non-finite value")
        rows.append((vals, lineno))
    if not rows:
        raise SampleParseError(0, "no data rows")
    pts = np.array([r[0] for r in rows])
    for j in range(2):
        col = pts[:, j]
        order = np.argsort(col, kind="stable")
        dup = np.flatnonzero(col[order][1:] == col[order][:-1])
        if dup.size:
            a, b = sorted((rows[order[dup[0]]][1], rows[order[dup[0] + 1]][1]))
            raise TieError(f"tied values in column {j + 1} on lines {a} and {b}")
    return pts


def read_sample(path) -> RankedSample:
    with open(path, encoding="utf-8") as fh:
        return standardize(parse_sample(fh.read()))


def from_uniform(u) -> RankedSample:
    """Ranked sample of ``X = 1/U`` remembering ``U`` (simulation path)."""
    u = np.asarray(u, dtype=float)
    return standardize(1.0 / u, u=u)


def _check_k(k, n):
    k = int(k)
    if not (1 <= k <= n):
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    return k


# ---------------------------------------------------------------------------
# the estimator
# ---------------------------------------------------------------------------


def radius_threshold(a, k, p):
    """Largest admissible second tail rank for first tail rank ``a`` under the radius cut.

    ``b <= radius_threshold(a)`` is equivalent to ``a**-p + b**-p >= k**-p``
    (``min(a, b) <= k`` for the max-norm).
    """
    a = np.asarray(a, dtype=float)
    return snap_floor(k * y_p(a / k, p))


def angle_threshold(a, theta):
    """Largest admissible second tail rank with ``b / a <= tan(theta)``."""
    t = tan_angle(theta)
    a = np.asarray(a, dtype=float)
    if np.isinf(t):
        return np.full(a.shape, np.inf)
    return snap_floor(a * t)


def _qualifying(sample, k, p):
    tr = sample.tail_ranks
    a, b = tr[:, 0], tr[:, 1]
    keep = b <= radius_threshold(a, k, p)
    return a[keep], b[keep]


def phi_hat(theta, sample: RankedSample, k, p):
    """Empirical angular measure ``Phihat_p(theta)`` (vectorized over ``theta``)."""
    p = check_p(p)
    k = _check_k(k, sample.n)
    theta = check_theta(theta)
    a, b = _qualifying(sample, k, p)
    flat = np.ravel(theta)
    out = np.empty(flat.shape)
    for i, th in enumerate(flat):
        out[i] = np.count_nonzero(b <= angle_threshold(a, th)) / k
    return out.reshape(theta.shape) if theta.ndim else float(out[0])


def jump_angles(sample, k, p):
    """Sorted angles ``arctan(b/a)`` of the observations passing the radius cut."""
    a, b = _qualifying(sample, _check_k(k, sample.n), check_p(p))
    return np.sort(np.arctan2(b.astype(float), a.astype(float)))


# ---------------------------------------------------------------------------
# marginal tail processes
# ---------------------------------------------------------------------------


class TailFunctions:
    """Marginal empirical distribution/quantile functions of ``U`` and their tail processes."""

    def __init__(self, u, k):
        u = np.asarray(u, dtype=float)
        if u.ndim != 2 or u.shape[1] != 2:
            raise ValueError("u must have shape (n, 2)")
        self.n = u.shape[0]
        self.k = _check_k(k, self.n)
        self.sqk = math.sqrt(self.k)
        self.scale = self.n / self.k
        # order[j][i] = U_(i) for i = 0..n with U_(0) = 0
        self.order = [np.concatenate([[0.0], np.sort(u[:, j])]) for j in range(2)]

    def count(self, j, u):
        """``n * Gamma_jn(u)`` (number of ``U_ij <= u``); ``n u`` beyond 1."""
        u = np.asarray(u, dtype=float)
        c = np.searchsorted(self.order[j][1:], u, side="right").astype(float)
        return np.where(u > 1.0, self.n * u, c)

    def gamma(self, j, u):
        return self.count(j, u) / self.n

    def quantile_ns(self, j, m):
        """``Q_jn(m / n)`` for ``m = n s`` given directly (keeps integer products exact)."""
        m = np.asarray(m, dtype=float)
        idx = snap_floor(m)
        inside = idx <= self.n
        safe = np.where(inside & np.isfinite(idx), np.maximum(idx, 0), 0).astype(np.int64)
        return np.where(inside, self.order[j][safe], m / self.n)

    def quantile(self, j, s):
        return self.quantile_ns(j, np.asarray(s, dtype=float) * self.n)

    def w(self, j, x):
        x = np.asarray(x, dtype=float)
        return self.sqk * (self.scale * self.gamma(j, x / self.scale) - x)

    def v(self, j, x):
        x = np.asarray(x, dtype=float)
        return self.sqk * (self.scale * self.quantile(j, x / self.scale) - x)

    def breaks(self, j):
        """Jump locations of ``w_jn`` on ``[0, n/k]`` (``0`` first)."""
        return self.scale * self.order[j]

    def int_w_over_x(self, j, b):
        """``int_0^b w_jn(x) / x dx`` evaluated exactly on the linear pieces."""
        b = np.asarray(b, dtype=float)
        xs = np.append(self.breaks(j), self.scale)  # pieces [xs[i], xs[i+1]) with count i
        i = np.arange(self.n + 1)
        lo, hi = xs[:-1], xs[1:]
        with np.errstate(divide="ignore", invalid="ignore"):
            logs = np.where(i > 0, np.log(hi / np.where(lo > 0, lo, 1.0)), 0.0)
        pieces = self.sqk * (i / self.k * logs - (hi - lo))
        prefix = np.concatenate([[0.0], np.cumsum(pieces)])
        bb = np.minimum(b, self.scale)
        m = np.clip(np.searchsorted(xs, bb, side="right") - 1, 0, self.n)
        x0 = xs[m]
        with np.errstate(divide="ignore", invalid="ignore"):
            plog = np.where(m > 0, np.log(bb / np.where(x0 > 0, x0, 1.0)), 0.0)
        part = self.sqk * (m / self.k * plog - (bb - x0))
        out = prefix[m] + part
        return out if out.ndim else float(out)


def tail_functions(sample: RankedSample, k) -> TailFunctions:
    if sample.u is None:
        raise ValueError("tail processes need the uniform standardization U of the sample")
    return TailFunctions(sample.u, k)


def zs_processes(x, theta, sample, k, p, tf: TailFunctions | None = None):
    """Return ``(z, s)`` with
    ``(n/k) Q2(Gamma1(kx/n) tan theta) = x tan theta + z / sqrt(k)`` and
    ``(n/k) Q2((k/n) y_p((n/k) Gamma1(kx/n))) = y_p(x) + s / sqrt(k)``.

    When both sides of the second identity are infinite ``s`` is set to 0.
    """
    p = check_p(p)
    tf = tf or tail_functions(sample, k)
    x = np.asarray(x, dtype=float)
    t = tan_angle(theta)
    sk = tf.sqk
    w1 = tf.w(0, x)
    if np.isinf(t):
        z = np.full(x.shape, np.inf)
    else:
        z = w1 * t + tf.v(1, x * t + w1 * t / sk)
    xs = x + w1 / sk
    ys = y_p(xs, p)
    base = y_p(x, p)
    with np.errstate(invalid="ignore"):
        s = sk * (ys - base) + tf.v(1, ys)
    s = np.where(np.isinf(ys) & np.isinf(base), 0.0, s)
    s = np.where(np.isinf(ys) & np.isfinite(base), np.inf, s)
    if z.ndim == 0:
        return float(z), float(s)
    return z, s


# ---------------------------------------------------------------------------
# estimated region
# ---------------------------------------------------------------------------


class HatRegion:
    """The estimated region ``Chat_{p,theta}`` built from the marginal step functions."""

    def __init__(self, tf: TailFunctions, theta, p):
        self.tf = tf
        self.p = check_p(p)
        self.theta = float(check_theta(theta))
        self.t = tan_angle(self.theta)

    def bound_from_count(self, c):
        """Upper y-bound (x-scale) given ``c = n Gamma1(kx/n)``."""
        tf = self.tf
        c = np.asarray(c, dtype=float)
        if self.theta == 0.0:
            return np.zeros(c.shape)
        b2 = tf.quantile_ns(1, tf.k * y_p(c / tf.k, self.p))
        if np.isinf(self.t):
            b = b2
        else:
            b = np.minimum(tf.quantile_ns(1, c * self.t), b2)
        return tf.scale * b

    def bound(self, x):
        x = np.asarray(x, dtype=float)
        return self.bound_from_count(self.tf.count(0, x / self.tf.scale))

    def contains(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = y <= self.bound(x) * (1.0 + CLOSE_RTOL)
        if self.theta == 0.0:
            out = y <= 0.0
        return out if out.ndim else bool(out)

    def _columns(self):
        """Column edges (x-scale) and bounds for the part ``x <= n/k``."""
        tf = self.tf
        edges = np.append(tf.breaks(0), tf.scale)
        bounds = self.bound_from_count(np.arange(tf.n + 1))
        return edges[:-1], edges[1:], bounds

    def prob_mass(self, model):
        """``(n/k) P((k/n) Chat)`` as an exact finite sum of ``H`` increments."""
        if self.theta == 0.0:
            return 0.0
        lo, hi, b = self._columns()
        tf = self.tf
        v = np.minimum(b / tf.scale, 1.0)
        inc = model.joint_cdf_H(hi / tf.scale, v) - model.joint_cdf_H(lo / tf.scale, v)
        return tf.scale * float(np.sum(inc))

    def lambda_mass(self, model):
        """``Lambda(Chat)``: exact column sums up to ``n/k`` plus the tail ``x > n/k``."""
        if self.theta == 0.0:
            return 0.0
        lo, hi, b = self._columns()
        fin = np.isfinite(b)
        inc = np.where(
            fin,
            model.rect_mass(hi, np.where(fin, b, 1.0)) - model.rect_mass(lo, np.where(fin, b, 1.0)),
            hi - lo,
        )
        return float(np.sum(inc)) + self._tail_lambda(model)

    def _tail_lambda(self, model):
        tf = self.tf
        n, k, N = tf.n, tf.k, tf.scale
        t = self.t
        p = self.p
        pts = [N]
        if np.isfinite(t) and t > 0:
            i = np.arange(max(int(math.floor(n * t)) - 1, 0), n + 1)
            cand = i / (k * t)
            pts.extend(cand[cand > N].tolist())
            if n / (k * t) > N:
                pts.append(n / (k * t))
        if p != math.inf:
            yp_n = float(y_p(N, p))
            hi_i = min(n, int(math.ceil(k * yp_n)) + 1)
            i = np.arange(k + 1, max(hi_i, k + 1) + 1)
            cand = np.asarray(y_p(i / k, p), dtype=float)
            pts.extend(cand[np.isfinite(cand) & (cand > N)].tolist())
            if yp_n > N:
                pts.append(yp_n)
        pts = np.unique(np.asarray(pts))
        total = 0.0

        def steps(x):
            m1 = np.inf if not np.isfinite(t) else k * x * t
            m2 = k * float(y_p(x, p))
            return m1 <= n, m2 <= n

        for a, b in zip(pts[:-1], pts[1:]):
            mid = 0.5 * (a + b)
            s1, s2 = steps(mid)
            if s1 and s2:
                c = float(self.bound(mid))
                total += float(model.rect_mass(b, c) - model.rect_mass(a, c))
            else:
                f = lambda x: float(model.col_density(x, float(self.bound(x))))  # noqa: E731
                total += quad(f, a, b, what=f"Lambda(Chat) tail theta={self.theta}")
        # last piece [B, inf): step bound c2 from y_p, ray bound x t beyond n/(k t)
        B = float(pts[-1])
        c2 = tf.scale * float(tf.quantile_ns(1, k * float(y_p(2.0 * B + 1.0, p))))
        if p == math.inf:
            c2 = tf.scale * float(tf.quantile_ns(1, k))
        if not np.isfinite(t):
            total += c2 - float(model.rect_mass(B, c2))
        else:
            xs = c2 / t if t > 0 else np.inf
            if xs <= B:
                total += c2 - float(model.rect_mass(B, c2))
            else:
                total += (xs - B) * float(model.col_density(1.0, t))
                total += c2 - float(model.rect_mass(xs, c2))
        return total


def count_in_hat(sample, k, theta, p, tf=None):
    tf = tf or tail_functions(sample, k)
    reg = HatRegion(tf, theta, p)
    pts = sample.u * tf.scale
    return np.count_nonzero(reg.contains(pts[:, 0], pts[:, 1])) / tf.k


def contains_C_hat(x, y, theta, sample, k, p):
    """Membership in the estimated region ``Chat_{p,theta}``."""
    return HatRegion(tail_functions(sample, k), theta, p).contains(x, y)


# ---------------------------------------------------------------------------
# model-side quantities at finite n (cached; sample independent)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=4096)
def _phi_cached(model, p, theta):
    return float(model.angular_cdf_Phi(theta, p))


def phi_true(model, p, theta):
    p = check_p(p)
    th = np.asarray(theta, dtype=float)
    out = np.array([_phi_cached(model, p, float(x)) for x in np.ravel(th)]).reshape(th.shape)
    return out if out.ndim else float(out)


@lru_cache(maxsize=16384)
def _scaled_prob_C(model, p, n, k, theta):
    if theta == 0.0:
        return 0.0
    t = float(tan_angle(theta))
    N = n / k
    s = k / n
    xp = float(x_p(theta, p))
    what = f"P(tC) theta={theta}"
    total = 0.0
    a_end = min(xp, N)
    if np.isinf(t):
        total += a_end  # dH/du(u, 1) = 1
    else:
        f = lambda x: float(model.cond_cdf_u(s * x, min(s * x * t, 1.0)))  # noqa: E731
        total += quad(f, 0.0, a_end, points=[1.0 / (s * t)] if t > 0 else None, what=what)
    if xp < N:
        g = lambda x: float(model.cond_cdf_u(s * x, min(s * float(y_p(x, p)), 1.0)))  # noqa: E731
        kinks = [1.0] if p == math.inf else [float(y_p(N, p))]
        total += quad(g, xp, N, points=kinks, what=what)
    return total


def scaled_prob_C(model, p, n, k, theta):
    """``(n/k) P((k/n) C_{p,theta})`` by quadrature of ``dH/du`` along the boundary."""
    p = check_p(p)
    th = np.asarray(theta, dtype=float)
    out = np.array([_scaled_prob_C(model, p, int(n), int(k), float(x)) for x in np.ravel(th)])
    out = out.reshape(th.shape)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# expansion
# ---------------------------------------------------------------------------


def _gl_pieces(f, a, b):
    """Gauss-Legendre integrals of ``f(x, piece_index)`` over each ``[a_i, b_i]``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size == 0:
        return np.zeros(0)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = mid[:, None] + half[:, None] * _GL_X[None, :]
    idx = np.broadcast_to(np.arange(a.size)[:, None], x.shape)
    return half * np.sum(f(x, idx) * _GL_W[None, :], axis=1)


class Expansion:
    """Evaluator of the expansion ``E_{n,p}(theta)`` for one sample.

    Sample-dependent pieces (marginal step functions and their weighted
    integrals along the y_p curve) are precomputed once; each ``theta`` then
    costs a few searches plus one partial piece.
    """

    def __init__(self, sample: RankedSample, k, p, model):
        self.sample = sample
        self.tf = tail_functions(sample, k)
        self.k = self.tf.k
        self.n = self.tf.n
        self.p = check_p(p)
        self.model = model
        N = self.tf.scale
        scaled = sample.u * N
        self._x, self._y = scaled[:, 0], scaled[:, 1]
        in_r = self._y <= y_p(self._x, self.p) * (1.0 + CLOSE_RTOL)
        self._ratios = np.sort(self._y[in_r] / self._x[in_r])
        self._n_r = int(np.count_nonzero(in_r))
        if self.p != math.inf:
            self._prep_curve()

    # -- term 1 -------------------------------------------------------------
    def empirical_count(self, theta):
        """``(1/k) #{i : (n/k) U_i in C_{p,theta}}``."""
        th = np.asarray(theta, dtype=float)
        t = tan_angle(th)
        cnt = np.searchsorted(self._ratios, np.asarray(t) * (1.0 + CLOSE_RTOL), side="right")
        cnt = np.where(np.asarray(th) >= HALF_PI, self._n_r, cnt)
        return cnt / self.k

    def stochastic_term(self, theta):
        """``W_{n,k}(C_{p,theta})``."""
        th = np.asarray(theta, dtype=float)
        prob = scaled_prob_C(self.model, self.p, self.n, self.k, th)
        return self.tf.sqk * (self.empirical_count(th) - prob)

    # -- term 2 -------------------------------------------------------------
    def ray_term(self, theta):
        th = np.asarray(theta, dtype=float)
        xp = np.asarray(x_p(th, self.p), dtype=float)
        t = np.asarray(tan_angle(th), dtype=float)
        c = np.asarray(cot_angle(th), dtype=float)
        lam = self.model.lambda_density
        with np.errstate(invalid="ignore"):
            first = np.asarray(lam(c, 1.0)) * self.tf.int_w_over_x(0, xp)
            top = np.where(np.isinf(t), np.inf, xp * t)
            second = np.asarray(lam(1.0, t)) * self.tf.int_w_over_x(1, top)
        out = first - second
        return np.where(th <= 0.0, 0.0, out)

    # -- term 3 -------------------------------------------------------------
    def _prep_curve(self):
        p, tf, lam = self.p, self.tf, self.model.lambda_density
        N = tf.scale
        sk = tf.sqk
        # A: int g(x) w1(x) dx with g = lambda(x, y_p(x)) y_p'(x), x in [1, N]
        bx = tf.breaks(0)
        xs = np.unique(np.concatenate([[1.0], bx[(bx > 1.0) & (bx < N)], [N]]))
        self._a_edges = xs
        self._a_counts = np.searchsorted(bx[1:], xs[:-1], side="right")

        def fa(x, i, yy=None):
            yy = y_p(x, p) if yy is None else yy
            slope = -((yy / x) ** (p + 1.0))
            return lam(x, yy) * slope * sk * (self._a_counts[i] / self.k - x)

        self._fa = fa
        self._a_pieces = self._pieces(fa, xs[:-1], xs[1:], self._a_counts, "A")
        self._a_suffix = np.concatenate([np.cumsum(self._a_pieces[::-1])[::-1], [0.0]])

        # B: int lambda(x, y_p(x)) w2(y_p(x)) dx; w2 breaks at y_i in (1, N) map to x = y_p(y_i)
        by = tf.breaks(1)
        ys = by[(by > 1.0) & (by < N)]
        x_lo = float(y_p(N, p))
        xb = np.unique(np.concatenate([[x_lo], np.asarray(y_p(ys, p), dtype=float)]))
        self._b_edges = xb  # last piece extends to infinity
        ymid = y_p(np.append(0.5 * (xb[:-1] + xb[1:]), xb[-1] + 1.0), p)
        self._b_counts = np.searchsorted(by[1:], ymid, side="right")

        def fb(x, i, yy=None):
            yy = y_p(x, p) if yy is None else yy
            return lam(x, yy) * sk * (self._b_counts[i] / self.k - yy)

        self._fb = fb
        fin = self._pieces(fb, xb[:-1], xb[1:], self._b_counts[:-1], "B")
        last = self._infinite_piece(fb, xb[-1], len(xb) - 1)
        self._b_pieces = np.append(fin, last)
        self._b_suffix = np.concatenate([np.cumsum(self._b_pieces[::-1])[::-1], [0.0]])

    def _near_one(self, a, b):
        return (a - 1.0) < 4.0 * (b - a)

    def _quad_piece(self, f, i, a, b, what):
        if a > 1.0:
            return quad(lambda x: float(f(np.array(x), i)), a, b, what=what)
        # x = 1 + w**p removes the algebraic singularity of y_p' at 1
        q = self.p

        def g(w):
            if w <= 0:
                return 0.0
            d = w**q
            with np.errstate(over="ignore", invalid="ignore"):
                val = float(f(np.array(1.0 + d), i, y_p_offset(d, q))) * q * w ** (q - 1.0)
            # overflow only where w**q is below ~1e-250, a negligible sliver
            return val if math.isfinite(val) else 0.0

        return quad(g, 0.0, (b - 1.0) ** (1.0 / q), what=what)

    def _pieces(self, f, a, b, counts, what):
        out = _gl_pieces(f, a, b)
        for i in np.flatnonzero(self._near_one(a, b)):
            out[i] = self._quad_piece(f, i, float(a[i]), float(b[i]), what)
        return out

    def _infinite_piece(self, f, a, i):
        # x = a / s on s in (0, 1]
        return quad(lambda s: float(f(np.array(a / s), i)) * a / (s * s) if s > 0 else 0.0,
                    0.0, 1.0, what="B tail")

    def _partial(self, f, x0, edges, counts, suffix, infinite_last):
        """``int_{x0}^{end} f`` using the precomputed pieces."""
        shape = np.shape(x0)
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        out = np.zeros(x0.shape)
        m = np.searchsorted(edges, x0, side="right") - 1
        before = m < 0
        out[before] = suffix[0]
        last = len(edges) - 1
        for idx in np.flatnonzero(~before):
            mi = int(m[idx])
            a = float(x0[idx])
            if not np.isfinite(a):
                continue
            if mi >= last:
                if infinite_last:
                    out[idx] = self._infinite_piece(f, a, last)
                continue
            b = float(edges[mi + 1])
            if self._near_one(a, b):
                part = self._quad_piece(f, mi, a, b, "partial piece")
            else:
                part = float(_gl_pieces(lambda x, _i: f(x, np.full(x.shape, mi)), [a], [b])[0])
            out[idx] = part + suffix[mi + 1]
        return out.reshape(shape)

    def curve_term(self, theta):
        th = np.asarray(theta, dtype=float)
        tf = self.tf
        lam = self.model
        if self.p == math.inf:
            t = np.asarray(tan_angle(th), dtype=float)
            c = np.asarray(cot_angle(th), dtype=float)
            w1 = float(tf.w(0, 1.0))
            w2 = float(tf.w(1, 1.0))
            up = np.maximum(1.0, t)
            lo = np.maximum(1.0, c)
            i1 = np.asarray(lam.col_density(1.0, up)) - float(lam.col_density(1.0, 1.0))
            i2 = 1.0 - np.asarray(lam.row_density(lo, 1.0))
            out = -w1 * i1 - w2 * i2
            return np.where(th <= 0.0, 0.0, out)
        xp = np.asarray(x_p(th, self.p), dtype=float)
        A = self._partial(self._fa, xp, self._a_edges, self._a_counts, self._a_suffix, False)
        B = self._partial(self._fb, xp, self._b_edges, self._b_counts, self._b_suffix, True)
        return np.where(th <= 0.0, 0.0, A - B)

    def __call__(self, theta):
        th = check_theta(theta)
        out = self.stochastic_term(th) + self.ray_term(th) + self.curve_term(th)
        return out if np.ndim(out) else float(out)


def expansion_E(theta, sample, k, p, model):
    """The expansion ``E_{n,p}(theta)``; vectorized over ``theta``."""
    return Expansion(sample, k, p, model)(theta)


# ---------------------------------------------------------------------------
# decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DecompositionRow:
    theta: float
    V: float
    r: float
    Z: float
    total: float

    @property
    def residual(self):
        return self.V + self.r + self.Z - self.total


def decompose(theta, sample, k, p, model, tf=None) -> DecompositionRow:
    """Stochastic, bias and random-set terms of ``sqrt(k) (Phihat - Phi)`` at ``theta``."""
    p = check_p(p)
    theta = float(check_theta(theta))
    tf = tf or tail_functions(sample, k)
    reg = HatRegion(tf, theta, p)
    sk = tf.sqk
    try:
        count = count_in_hat(sample, k, theta, p, tf)
        pm = reg.prob_mass(model)
        lm = reg.lambda_mass(model)
        ph = phi_true(model, p, theta)
    except QuadratureError as exc:
        raise QuadratureError(f"decomposition at theta={theta}: {exc}") from exc
    V = sk * (count - pm)
    r = sk * (pm - lm)
    Z = sk * (lm - ph)
    total = sk * (phi_hat(theta, sample, tf.k, p) - ph)
    return DecompositionRow(theta, V, r, Z, total)


# ---------------------------------------------------------------------------
# angular probability measure and corollaries
# ---------------------------------------------------------------------------


def q_hat(theta, sample, k, p):
    """``Qhat_p(theta) = Phihat_p(theta) / Phihat_p(pi/2)``."""
    tot = phi_hat(HALF_PI, sample, k, p)
    if tot <= 0:
        raise EmptyTail("no observation passes the radius cut")
    return phi_hat(theta, sample, k, p) / tot


def q_true(theta, p, model):
    return phi_true(model, p, theta) / phi_true(model, p, HALF_PI)


def q_hat_inverse(u, sample, k, p):
    """Left-continuous inverse ``inf{theta : Qhat(theta) >= u}``."""
    ang = jump_angles(sample, k, p)
    m = ang.size
    if m == 0:
        raise EmptyTail("no observation passes the radius cut")
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise ValueError("u must lie in [0, 1]")
    idx = np.clip(np.ceil(u * m - 1e-12 * m).astype(np.int64), 1, m) - 1
    out = np.where(u <= 0, 0.0, ang[idx])
    return out if out.ndim else float(out)


def q_true_inverse(u, p, model):
    u = np.asarray(u, dtype=float)
    out = _qinv_cached(model, check_p(p), tuple(np.ravel(u).tolist())).reshape(u.shape)
    return out if out.ndim else float(out)


@lru_cache(maxsize=256)
def _qinv_cached(model, p, us):
    out = np.asarray(model.angular_quantile(np.array(us), p), dtype=float).reshape(-1)
    out.setflags(write=False)
    return out


def corollary1_gap(theta, sample, k, p, model, expansion=None):
    """``sqrt(k)(Qhat - Q) - [E(theta) Phi(pi/2) - Phi(theta) E(pi/2)] / Phi(pi/2)^2``."""
    p = check_p(p)
    th = check_theta(theta)
    ex = expansion or Expansion(sample, k, p, model)
    tot = phi_true(model, p, HALF_PI)
    ph = phi_true(model, p, th)
    e_t = np.asarray(ex(th))
    e_top = float(ex(HALF_PI))
    sk = math.sqrt(ex.k)
    gap = sk * (q_hat(th, sample, k, p) - ph / tot) - (e_t * tot - ph * e_top) / tot**2
    # both ratios equal 1 at pi/2 and the correction cancels; pin it against rounding
    gap = np.where(th >= HALF_PI, 0.0, gap)
    return gap if np.ndim(gap) else float(gap)


def quantile_expansion_gap(u, sample, k, p, model, expansion=None):
    """Gap between the angular quantile process and its expansion at levels ``u``."""
    p = check_p(p)
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("u must lie in (0, 1)")
    ex = expansion or Expansion(sample, k, p, model)
    q = np.asarray(q_true_inverse(u, p, model), dtype=float)
    tot = phi_true(model, p, HALF_PI)
    e_top = float(ex(HALF_PI))
    e_q = np.asarray(ex(q))
    dens = np.asarray(model.angular_density_phi(q, p))
    lead = math.sqrt(ex.k) * (np.asarray(q_hat_inverse(u, sample, k, p)) - q)
    corr = (np.asarray(phi_true(model, p, q)) * e_top - e_q * tot) / (dens * tot)
    out = lead - corr
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Wasserstein distance between Qhat and Q
# ---------------------------------------------------------------------------


def wasserstein1_discrete(atoms_a, weights_a, atoms_b, weights_b):
    """Exact ``W1`` between two discrete distributions on the line (CDF-difference form)."""
    xa, wa = np.asarray(atoms_a, float), np.asarray(weights_a, float)
    xb, wb = np.asarray(atoms_b, float), np.asarray(weights_b, float)
    grid = np.unique(np.concatenate([xa, xb]))
    fa = np.array([wa[xa <= g].sum() for g in grid]) / wa.sum()
    fb = np.array([wb[xb <= g].sum() for g in grid]) / wb.sum()
    return float(np.sum(np.abs(fa - fb)[:-1] * np.diff(grid)))


def wasserstein1(sample, k, p, model):
    """``int_0^{pi/2} |Qhat_p - Q_p| d theta`` computed piecewise between the jumps of ``Qhat``."""
    p = check_p(p)
    ang = jump_angles(sample, k, p)
    m = ang.size
    if m == 0:
        raise EmptyTail("no observation passes the radius cut")
    tot = phi_true(model, p, HALF_PI)

    @lru_cache(maxsize=None)
    def moment(theta):  # int_0^theta s phi(s) ds
        if theta <= 0:
            return 0.0
        f = lambda s: s * float(model.angular_density_phi(s, p)) if 0 < s < HALF_PI else 0.0  # noqa: E731
        return quad(f, 0.0, theta, epsabs=1e-12, epsrel=1e-12, what="W1 moment")

    def G(theta, qval):  # int_0^theta Q
        return theta * qval - moment(theta) / tot

    edges = np.concatenate([[0.0], ang, [HALF_PI]])
    levels = np.arange(m + 1) / m  # Qhat on [edges[i], edges[i+1])
    qv = {float(e): phi_true(model, p, float(e)) / tot for e in np.unique(edges)}
    total = 0.0
    for i in range(m + 1):
        lo, hi = float(edges[i]), float(edges[i + 1])
        if hi <= lo:
            continue
        c = float(levels[i])
        qlo, qhi = qv[lo], qv[hi]
        glo, ghi = G(lo, qlo), G(hi, qhi)
        if c <= qlo:
            total += (ghi - glo) - c * (hi - lo)
        elif c >= qhi:
            total += c * (hi - lo) - (ghi - glo)
        else:
            ts = float(q_true_inverse(c, p, model))
            ts = min(max(ts, lo), hi)
            gs = G(ts, c)
            total += c * (ts - lo) - (gs - glo) + (ghi - gs) - c * (hi - ts)
    return total


__all__ = [
    "DecompositionRow",
    "EmptyTail",
    "Expansion",
    "HatRegion",
    "RankedSample",
    "SampleParseError",
    "TailFunctions",
    "TieError",
    "contains_C_hat",
    "corollary1_gap",
    "count_in_hat",
    "decompose",
    "expansion_E",
    "from_uniform",
    "jump_angles",
    "phi_hat",
    "phi_true",
    "q_hat",
    "q_hat_inverse",
    "q_true",
    "q_true_inverse",
    "parse_sample",
    "read_sample",
    "quantile_expansion_gap",
    "scaled_prob_C",
    "standardize",
    "tail_functions",
    "wasserstein1",
    "wasserstein1_discrete",
    "zs_processes",
]
