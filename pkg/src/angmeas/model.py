"""Ground-truth dependence models for simulation and oracle checks.

A model exposes the tail measure ``Lambda`` (through the stable tail dependence
function and its partial derivatives), the law ``P`` of the uniform
standardization ``U = (1 - F1(X1), 1 - F2(X2))``, and an exact sampler of ``U``.
Everything else (angular distribution, angular density, bias diagnostic) is
derived generically from those primitives in :class:`TailModel`.

Notation used throughout:

``R(x, y) = Lambda((0, x] x (0, y]) = x + y - l(x, y)``
    mass of a lower-left rectangle,
``col_density(x, y) = dR/dx = 1 - dl/dx``
    Lambda-mass per unit width of the column ``{x} x (0, y]``,
``row_density(x, y) = dR/dy = 1 - dl/dy``
    Lambda-mass per unit height of the row ``(0, x] x {y}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from . import _kernels
from .geometry import (
    HALF_PI,
    check_p,
    check_theta,
    pnorm,
    tan_angle,
    x_p,
    y_p,
)

QUAD_EPSABS = 1e-11
QUAD_EPSREL = 1e-11
# accuracy contract: a result whose error estimate exceeds this is a failure
QUAD_FAIL_ABS = 1e-9


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested accuracy."""


def quad(f, a, b, *, points=None, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=400, what=""):
    """``scipy.integrate.quad`` that raises instead of warning when accuracy is not met."""
    if a == b:
        return 0.0
    kw = dict(epsabs=epsabs, epsrel=epsrel, limit=limit, full_output=1)
    if points is not None and math.isfinite(a) and math.isfinite(b):
        pts = sorted(p for p in set(points) if a < p < b)
        if pts:
            kw["points"] = pts
    res = integrate.quad(f, a, b, **kw)
    val, err = res[0], res[1]
    if len(res) > 3 and not (err <= max(QUAD_FAIL_ABS, 10 * epsabs, 10 * epsrel * abs(val))):
        raise QuadratureError(f"quadrature failed ({what}): value={val!r} err={err!r}")
    return val


def _arr(v):
    return np.asarray(v, dtype=float)


def _out(v):
    return v if np.ndim(v) else float(v)


class TailModel:
    """Generic machinery shared by every model; subclasses supply the closed forms.

    Required primitives: ``stdf``, ``stdf_dx``, ``stdf_dy``, ``lambda_density``,
    ``joint_cdf_H``, ``cond_cdf_u``, ``cond_cdf_v``, ``joint_density_c``, ``sample``.
    """

    # --- Lambda masses ------------------------------------------------------
    def rect_mass(self, x, y):
        """``Lambda((0,x] x (0,y])``; infinite sides allowed (not both)."""
        x, y = _arr(x), _arr(y)
        with np.errstate(invalid="ignore"):
            out = x + y - self.stdf(x, y)
        out = np.where(np.isinf(y), x, out)
        out = np.where(np.isinf(x), y, out)
        return _out(out)

    def col_density(self, x, y):
        x, y = _arr(x), _arr(y)
        out = 1.0 - self.stdf_dx(x, y)
        return _out(np.where(np.isinf(y), 1.0, out))

    def row_density(self, x, y):
        x, y = _arr(x), _arr(y)
        out = 1.0 - self.stdf_dy(x, y)
        return _out(np.where(np.isinf(x), 1.0, out))

    def box_mass(self, x0, x1, y0, y1):
        """``Lambda((x0,x1] x (y0,y1])`` by inclusion-exclusion of ``rect_mass``."""
        return (
            self.rect_mass(x1, y1)
            - self.rect_mass(x0, y1)
            - self.rect_mass(x1, y0)
            + self.rect_mass(x0, y0)
        )

    def swapped(self) -> "TailModel":
        """The model of the coordinate-swapped vector."""
        return SwappedModel(self)

    # --- angular quantities -------------------------------------------------
    def angular_density_phi(self, theta, p):
        """Density of the angular measure, recovered from ``lambda`` along the ray at ``theta``.

        The representative point on the ray is ``(1, tan theta)`` below the
        diagonal and ``(cot theta, 1)`` above it.
        """
        p = check_p(p)
        theta = check_theta(theta)
        if np.any((theta <= 0.0) | (theta >= HALF_PI)):
            raise ValueError("the angular density is defined on the open interval (0, pi/2)")
        low = theta <= 0.25 * math.pi
        x = np.where(low, 1.0, np.cos(theta) / np.sin(theta))
        y = np.where(low, np.tan(theta), 1.0)
        return _out(self.phi_from_point(x, y, p))

    def phi_from_point(self, x, y, p):
        """Angular density at ``arctan(y/x)`` computed from ``lambda(x, y)``."""
        x, y = _arr(x), _arr(y)
        return self.lambda_density(x, y) * (x * x + y * y) * pnorm(1.0, y / x, p) / y

    def lambda_from_phi(self, x, y, p):
        """``lambda(x, y)`` rebuilt from the angular density (inverse of ``phi_from_point``)."""
        x, y = _arr(x), _arr(y)
        phi = self.angular_density_phi(np.arctan2(y, x), p)
        return y / (x * x + y * y) / pnorm(1.0, y / x, p) * phi

    def angular_cdf_Phi(self, theta, p):
        """``Phi_p(theta) = Lambda(C_{p,theta})``.

        Below ``x_p(theta)`` the region is a wedge whose column density is
        constant by homogeneity. Beyond it the region is sliced horizontally,
        using that ``y_p`` is an involution, so the only quadrature left runs
        over ``y`` in ``[1, y_p(x_p(theta))]``.
        """
        p = check_p(p)
        theta = check_theta(theta)
        vals = np.array([self._phi_scalar(float(t), p) for t in np.ravel(theta)])
        return _out(vals.reshape(np.shape(theta)))

    def _phi_scalar(self, theta, p):
        if theta == 0.0:
            return 0.0
        xp = float(x_p(theta, p))
        t = float(tan_angle(theta))
        wedge = xp * float(self.col_density(1.0, t))
        # {x > xp, y <= 1}
        strip = float(self.stdf(xp, 1.0)) - xp
        if p == math.inf:
            return wedge + strip
        top = float(y_p(xp, p))
        # {x >= xp, 1 < y <= y_p(x)}: row masses between xp and y_p(y)
        def f(y):
            return float(self.stdf_dy(xp, y)) - float(self.stdf_dy(float(y_p(y, p)), y))

        what = f"Phi tail theta={theta}"
        mid = min(top, 2.0)
        cap = quad(f, 1.0, mid, what=what)
        if top > mid:
            # y = 1/s keeps the far part on a bounded interval
            cap += quad(lambda s: f(1.0 / s) / (s * s), 1.0 / top, 1.0 / mid, what=what)
        return wedge + strip + cap

    def rect_mass_angular(self, x, y, p):
        """``Lambda((0,x] x (0,y])`` integrated from the angular density.

        Rays below the corner angle leave the rectangle through its right side,
        the others through its top, which gives two one-dimensional integrals.
        Independent of ``rect_mass``; used to cross-check it.
        """
        p = check_p(p)
        x, y = float(x), float(y)
        if x <= 0.0 or y <= 0.0:
            return 0.0
        corner = math.atan2(y, x)

        def w(th, trig):
            s, c = math.sin(th), math.cos(th)
            return trig(th) / float(pnorm(s, c, p)) * float(self.angular_density_phi(th, p))

        low = quad(lambda th: w(th, math.sin), 0.0, corner, what="rectangle, side")
        high = quad(lambda th: w(th, math.cos), corner, HALF_PI, what="rectangle, top")
        return x * low + y * high

    def angular_quantile(self, u, p):
        """``Q_p^{-1}(u)`` for the normalized angular distribution by bracketed root-finding."""
        p = check_p(p)
        total = float(self.angular_cdf_Phi(HALF_PI, p))
        u_arr = _arr(u)
        if np.any((u_arr <= 0) | (u_arr >= 1)):
            raise ValueError("u must lie in (0, 1)")
        out = []
        for ui in np.ravel(u_arr):
            g = lambda th: self._phi_scalar(th, p) / total - ui  # noqa: E731
            out.append(optimize.brentq(g, 0.0, HALF_PI, xtol=1e-14, rtol=1e-14, maxiter=200))
        return _out(np.array(out).reshape(u_arr.shape))

    # --- bias diagnostic ------------------------------------------------------
    def bias_functional_D(self, T, t, epsabs=1e-9):
        """``iint_{L_T} |t c(t u) - lambda(u)| du`` over ``L_T = {u in [0,T]^2 : min(u) <= 1}``."""
        T = float(T)
        t = float(t)
        if T < 1.0:
            raise ValueError("T must be >= 1")
        if not (t > 0.0) or t > 1.0 or t * T > 1.0:
            raise ValueError("need 0 < t and t*T <= 1")

        def inner(u1, y0, y1):
            def g(u2):
                return abs(t * float(self.joint_density_c(t * u1, t * u2)) - float(self.lambda_density(u1, u2)))

            return quad(g, y0, y1, points=[u1], epsabs=epsabs * 0.1, epsrel=1e-8, what="D inner")

        def rect(x0, x1, y0, y1):
            return quad(lambda u1: inner(u1, y0, y1), x0, x1, epsabs=epsabs, epsrel=1e-8, what="D outer")

        total = rect(0.0, 1.0, 0.0, 1.0)
        if T > 1.0:
            total += rect(0.0, 1.0, 1.0, T) + rect(1.0, T, 0.0, 1.0)
        return total


@dataclass(frozen=True)
class LogisticModel(TailModel):
    """Symmetric logistic extreme-value dependence with parameter ``alpha`` in ``(0, 1)``.

    ``l(x, y) = (x**(1/alpha) + y**(1/alpha)) ** alpha``. Small ``alpha`` means
    strong dependence; ``alpha = 1`` (independence) is excluded because the tail
    measure then has no density.
    """

    alpha: float

    def __post_init__(self):
        a = float(self.alpha)
        if not (0.0 < a < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        object.__setattr__(self, "alpha", a)

    @property
    def _a(self):
        return 1.0 / self.alpha

    # ratio helpers: r = small/large in [0, 1]
    def _pow_ratio(self, num, den):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.inf)
            r = np.where(np.isinf(den) & np.isfinite(num), 0.0, r)
            return r ** self._a

    def stdf(self, x, y):
        """Stable tail dependence function ``l(x, y)``."""
        x, y = _arr(x), _arr(y)
        big = np.maximum(x, y)
        small = np.minimum(x, y)
        with np.errstate(invalid="ignore"):
            rho = self._pow_ratio(small, big)
            out = big * np.exp(self.alpha * np.log1p(rho))
        out = np.where(big == 0, 0.0, out)
        out = np.where(np.isinf(big), np.inf, out)
        return _out(out)

    def stdf_minus_x(self, x, y):
        """``l(x, y) - x`` without cancellation (x finite, positive)."""
        x, y = _arr(x), _arr(y)
        rho = self._pow_ratio(y, x)
        with np.errstate(invalid="ignore", over="ignore"):
            out = np.where(rho <= 1.0, x * np.expm1(self.alpha * np.log1p(rho)), self.stdf(x, y) - x)
        return _out(out)

    def stdf_dx(self, x, y):
        """``dl/dx = (1 + (y/x)**(1/alpha)) ** (alpha - 1)``."""
        x, y = _arr(x), _arr(y)
        rho = self._pow_ratio(y, x)
        with np.errstate(over="ignore"):
            out = np.exp((self.alpha - 1.0) * np.log1p(rho))
        return _out(out)

    def stdf_dy(self, x, y):
        return self.stdf_dx(y, x)

    def col_density(self, x, y):
        x, y = _arr(x), _arr(y)
        rho = self._pow_ratio(y, x)
        with np.errstate(over="ignore"):
            out = -np.expm1((self.alpha - 1.0) * np.log1p(rho))
        return _out(out)

    def row_density(self, x, y):
        return self.col_density(y, x)

    def lambda_density(self, x, y):
        """``lambda(x, y) = -d2 l / dx dy``; symmetric and homogeneous of degree -1."""
        x, y = _arr(x), _arr(y)
        a = self._a
        big = np.maximum(x, y)
        small = np.minimum(x, y)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = small / big
            out = (1.0 - self.alpha) / self.alpha * r ** (a - 1.0) * (1.0 + r**a) ** (self.alpha - 2.0) / big
        out = np.where(np.isinf(big) | (small == 0), 0.0, out)
        return _out(out)

    # --- law of U -------------------------------------------------------------
    def _st(self, u, v):
        with np.errstate(divide="ignore"):
            return -np.log1p(-np.clip(u, 0.0, 1.0)), -np.log1p(-np.clip(v, 0.0, 1.0))

    def joint_cdf_H(self, u, v):
        """``P(U1 <= u, U2 <= v)`` for the survival extreme-value copula."""
        u, v = _arr(u), _arr(v)
        s, t = self._st(u, v)
        with np.errstate(invalid="ignore"):
            out = u + v + np.expm1(-self.stdf(s, t))
        out = np.where((u <= 0) | (v <= 0), 0.0, out)
        out = np.where(u >= 1, np.minimum(v, 1.0), out)
        out = np.where(v >= 1, np.minimum(u, 1.0), out)
        return _out(np.clip(out, 0.0, 1.0))

    def cond_cdf_u(self, u, v):
        """``dH/du (u, v) = P(U2 <= v | U1 = u)``."""
        u, v = _arr(u), _arr(v)
        s, t = self._st(u, v)
        with np.errstate(invalid="ignore", over="ignore"):
            out = 1.0 - np.exp(-self.stdf_minus_x(s, t)) * self.stdf_dx(s, t)
        out = np.where(np.isinf(s), 0.0, out)
        out = np.where(v <= 0, 0.0, out)
        out = np.where(v >= 1, 1.0, out)
        return _out(out)

    def cond_cdf_v(self, u, v):
        return self.cond_cdf_u(v, u)

    def joint_density_c(self, u, v):
        """Density of ``U`` on the open unit square."""
        u, v = _arr(u), _arr(v)
        s, t = self._st(u, v)
        with np.errstate(invalid="ignore", over="ignore"):
            lead = np.exp(s + t - self.stdf(s, t))
            out = lead * (self.stdf_dx(s, t) * self.stdf_dy(s, t) + self.lambda_density(s, t))
        return _out(out)

    # --- sampling -------------------------------------------------------------
    def sample(self, n, seed, tol=1e-13):
        """``n`` i.i.d. draws of ``U`` by conditional inversion; shape ``(n, 2)``.

        ``U1`` is uniform; ``U2`` solves ``dH/du(U1, v) = W`` for an independent
        uniform ``W``. The solve is a bracketed Newton iteration on a monotone
        convex reparametrization.
        """
        n = int(n)
        if n < 1:
            raise ValueError("n must be >= 1")
        _kernels._check_tol(tol)
        rng = np.random.default_rng(seed)
        w = rng.random((n, 2))
        u = w[:, 0]
        s = -np.log1p(-u)
        e = -np.log1p(-w[:, 1])
        L = _kernels.logistic_inverse(np.ascontiguousarray(s), np.ascontiguousarray(e), self.alpha, tol)
        return np.column_stack([u, self._v_from_logq(s, L)])

    def _v_from_logq(self, s, L):
        # log q = log(1 + z^(1/alpha)) with z = t/s, t = -log(1 - v)
        z = np.expm1(L) ** self.alpha
        return -np.expm1(-s * z)

    def conditional_inverse_exact(self, u, w):
        """Closed-form conditional inverse through the Wright omega function (oracle)."""
        from scipy.special import wrightomega

        u, w = _arr(u), _arr(w)
        s = -np.log1p(-u)
        e = -np.log1p(-w)
        beta = (1.0 - self.alpha) / self.alpha
        # (s/beta) m exp((s/beta) m) = (s/beta) exp((e+s)/beta), m = q**alpha
        arg = np.log(s / beta) + (e + s) / beta
        m = np.real(wrightomega(arg)) * beta / s
        L = np.log(m) / self.alpha
        return self._v_from_logq(s, L)

    def sample_stable(self, n, seed):
        """Marshall-Olkin construction with a positive stable frailty (independent oracle)."""
        rng = np.random.default_rng(seed)
        a = self.alpha
        th = rng.uniform(0.0, math.pi, n)
        w = rng.exponential(size=n)
        stable = (np.sin(a * th) / np.sin(th) ** (1.0 / a)) * (np.sin((1.0 - a) * th) / w) ** ((1.0 - a) / a)
        e = rng.exponential(size=(n, 2))
        v = np.exp(-((e / stable[:, None]) ** a))
        return 1.0 - v


class SwappedModel(TailModel):
    """Model of ``(U2, U1)`` given the model of ``(U1, U2)``."""

    def __init__(self, base: TailModel):
        self.base = base

    def __repr__(self):
        return f"SwappedModel({self.base!r})"

    def swapped(self):
        return self.base

    def stdf(self, x, y):
        return self.base.stdf(y, x)

    def stdf_dx(self, x, y):
        return self.base.stdf_dy(y, x)

    def stdf_dy(self, x, y):
        return self.base.stdf_dx(y, x)

    def col_density(self, x, y):
        return self.base.row_density(y, x)

    def row_density(self, x, y):
        return self.base.col_density(y, x)

    def lambda_density(self, x, y):
        return self.base.lambda_density(y, x)

    def joint_cdf_H(self, u, v):
        return self.base.joint_cdf_H(v, u)

    def cond_cdf_u(self, u, v):
        return self.base.cond_cdf_v(v, u)

    def cond_cdf_v(self, u, v):
        return self.base.cond_cdf_u(v, u)

    def joint_density_c(self, u, v):
        return self.base.joint_density_c(v, u)

    def sample(self, n, seed):
        return self.base.sample(n, seed)[:, ::-1].copy()
