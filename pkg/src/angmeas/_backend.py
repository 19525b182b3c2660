"""Kernel backend selection.

``ANGMEAS_BACKEND=numpy`` forces the pure-numpy kernels; the default uses
numba when it imports cleanly. The choice is made once at import time.
"""

from __future__ import annotations

import logging
import os

log = logging.getLogger(__name__)

_requested = os.environ.get("ANGMEAS_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"ANGMEAS_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

USE_NUMBA = False
if _requested == "numba":
    try:
        import numba  # noqa: F401

        USE_NUMBA = True
    except ImportError:  # pragma: no cover - depends on the environment
        log.warning("numba not importable; falling back to numpy kernels")

BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when enabled, otherwise the identity decorator."""
    if USE_NUMBA:
        import numba

        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f
