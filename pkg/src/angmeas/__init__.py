"""Rank-based estimation of the angular measure of a bivariate extreme-value tail."""

from ._backend import BACKEND
from .empirical import EmptyTail, TieError, phi_hat, standardize
from .geometry import HALF_PI, QUARTER_PI, contains_C, polar, x_p, y_p
from .model import LogisticModel, QuadratureError, SwappedModel

__all__ = [
    "BACKEND",
    "EmptyTail",
    "HALF_PI",
    "LogisticModel",
    "QUARTER_PI",
    "QuadratureError",
    "SwappedModel",
    "TieError",
    "contains_C",
    "phi_hat",
    "polar",
    "standardize",
    "x_p",
    "y_p",
]
