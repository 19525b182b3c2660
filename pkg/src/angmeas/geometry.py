"""Pseudo-polar coordinates and the region family bounded by rays and the unit L^p sphere.

All functions accept scalars or numpy arrays. The norm index ``p`` is a float
in ``[1, inf]`` and ``math.inf`` selects the max-norm branches explicitly.

Points live in the reciprocal ("uniform-margin") space: a point ``(x, y)``
corresponds to ``(1/x, 1/y)`` in the standardized Pareto space, so the unit
sphere ``||(1/x, 1/y)||_p = 1`` becomes the curve ``y = y_p(x)``.
"""

from __future__ import annotations

import math

import numpy as np

HALF_PI = 0.5 * math.pi
QUARTER_PI = 0.25 * math.pi

# Relative slack used for every closed (<=) comparison against a computed bound.
CLOSE_RTOL = 1e-12


def check_p(p) -> float:
    """Validate a norm index and return it as a float (``math.inf`` for the max-norm)."""
    if isinstance(p, str):
        s = p.strip().lower()
        if s in ("inf", "infinity", "oo", "max"):
            return math.inf
        p = float(s)
    p = float(p)
    if math.isnan(p) or p < 1.0:
        raise ValueError(f"norm index p must lie in [1, inf], got {p!r}")
    return p


def check_theta(theta):
    theta = np.asarray(theta, dtype=float)
    if np.any((theta < 0.0) | (theta > HALF_PI)) or np.any(np.isnan(theta)):
        raise ValueError("angles must lie in [0, pi/2]")
    return theta


def tan_angle(theta):
    """``tan(theta)`` with ``tan(pi/2) = inf`` exactly."""
    theta = np.asarray(theta, dtype=float)
    with np.errstate(over="ignore"):
        t = np.tan(theta)
    t = np.where(theta >= HALF_PI, np.inf, t)
    return t if t.ndim else float(t)


def cot_angle(theta):
    """``cot(theta)`` with ``cot(0) = inf`` and ``cot(pi/2) = 0`` exactly."""
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore"):
        c = np.cos(theta) / np.sin(theta)
    c = np.where(theta >= HALF_PI, 0.0, c)
    c = np.where(theta <= 0.0, np.inf, c)
    return c if c.ndim else float(c)


def pnorm(z1, z2, p):
    """``||(z1, z2)||_p`` for nonnegative (possibly infinite) coordinates."""
    p = check_p(p)
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    big = np.maximum(z1, z2)
    if p == math.inf:
        out = big
    else:
        small = np.minimum(z1, z2)
        with np.errstate(invalid="ignore", divide="ignore"):
            ratio = np.where(big > 0, small / np.where(big > 0, big, 1.0), 0.0)
            ratio = np.where(np.isinf(big), 0.0, ratio)
            out = big * (1.0 + ratio**p) ** (1.0 / p)
        out = np.where(np.isinf(big), np.inf, out)
    return out if out.ndim else float(out)


def y_p(x, p):
    """Upper boundary of the L^p unit-sphere region in reciprocal coordinates.

    ``inf`` for ``x < 1``; ``(1 - x**-p) ** (-1/p)`` for ``x >= 1`` when ``p`` is
    finite (``inf`` at ``x = 1``); for ``p = inf`` it is ``inf`` on ``[0, 1]`` and
    ``1`` beyond.  The max-norm region is closed at ``x = 1`` so that rank points
    with ``min`` rank exactly ``k`` sit inside it, matching the radius condition
    ``||z||_inf >= 1``.
    """
    p = check_p(p)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise ValueError("y_p is defined for x >= 0")
    if p == math.inf:
        out = np.where(x <= 1.0, np.inf, 1.0)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            logx = np.log(np.where(x > 1.0, x, 2.0))
            gap = -np.expm1(-p * logx)  # 1 - x**-p without cancellation
            val = gap ** (-1.0 / p)
        out = np.where(x > 1.0, val, np.inf)
        out = np.where(np.isinf(x), 1.0, out)
    return out if out.ndim else float(out)


def y_p_offset(delta, p):
    """``y_p(1 + delta)`` for ``delta > 0`` without rounding ``1 + delta`` first."""
    p = check_p(p)
    delta = np.asarray(delta, dtype=float)
    if p == math.inf:
        out = np.where(delta > 0, 1.0, np.inf)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            gap = -np.expm1(-p * np.log1p(np.where(delta > 0, delta, 1.0)))
            out = np.where(delta > 0, gap ** (-1.0 / p), np.inf)
        out = np.where(np.isinf(delta), 1.0, out)
    return out if out.ndim else float(out)


def y_p_prime(x, p):
    """Derivative of ``y_p`` on ``(1, inf)``: ``-(y_p(x)/x) ** (p+1)``; zero for ``p = inf``."""
    p = check_p(p)
    x = np.asarray(x, dtype=float)
    if p == math.inf:
        out = np.zeros_like(x)
    else:
        y = y_p(x, p)
        with np.errstate(invalid="ignore", over="ignore"):
            out = -((y / x) ** (p + 1.0))
        out = np.where(np.isinf(x), 0.0, out)
    return out if out.ndim else float(out)


def x_p(theta, p):
    """Abscissa where the ray ``y = x tan(theta)`` meets ``y = y_p(x)``: ``||(1, cot theta)||_p``."""
    p = check_p(p)
    theta = check_theta(theta)
    return pnorm(1.0, cot_angle(theta), p)


def region_bound(x, theta, p):
    """Upper y-boundary ``min(x tan(theta), y_p(x))`` of the region at angle ``theta > 0``."""
    p = check_p(p)
    x = np.asarray(x, dtype=float)
    t = tan_angle(theta)
    with np.errstate(invalid="ignore"):
        ray = np.where(np.isinf(t), np.inf, x * t)
    out = np.minimum(ray, y_p(x, p))
    return out if out.ndim else float(out)


def contains_C(x, y, theta, p):
    """Membership of ``(x, y)`` in the closed region ``C_{p,theta}``.

    At ``theta = 0`` the region is the Lambda-null set made of the horizontal
    axis and the segment ``{inf} x [0, 1]``; for ``0 < theta`` it is the set
    under ``min(x tan theta, y_p(x))``.
    """
    p = check_p(p)
    theta = float(check_theta(theta))
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if theta == 0.0:
        out = (y == 0.0) | (np.isinf(x) & (y <= 1.0))
    else:
        bound = region_bound(x, theta, p)
        out = y <= bound * (1.0 + CLOSE_RTOL)
    return out if out.ndim else bool(out)


def polar(z1, z2, p):
    """Pseudo-polar coordinates ``(r, theta)`` with ``r = ||z||_p`` and ``theta = arctan(z1/z2)``."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if np.any((z1 == 0) & (z2 == 0)):
        raise ValueError("polar coordinates are undefined at the origin")
    if np.any((z1 < 0) | (z2 < 0)):
        raise ValueError("polar coordinates need nonnegative coordinates")
    r = pnorm(z1, z2, p)
    theta = np.arctan2(z1, z2)
    if np.ndim(theta) == 0:
        return float(r), float(theta)
    return r, theta
