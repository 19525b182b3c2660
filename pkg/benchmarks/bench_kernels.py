"""Time the numba and numpy kernels on identical inputs.

    python benchmarks/bench_kernels.py [--size N] [--repeat R]

The numba timings exclude compilation (one warm-up call first). The two
backends must agree; the script exits non-zero if they do not.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from angmeas import _backend, _kernels


def _inputs(size, seed=0):
    rng = np.random.default_rng(seed)
    u = rng.random(size)
    s = -np.log1p(-u)
    e = rng.standard_exponential(size)
    nf, na, ncol = 32, size // 4, 400
    z = rng.standard_normal((nf, na))
    scale = rng.random(na)
    col = rng.integers(-1, ncol, na)
    row = rng.integers(-1, ncol, na)
    level = rng.integers(-1, 6, na)
    return (s, e, 0.5, 1e-13), (z, scale, col, row, level, ncol, ncol, 6)


def _time(fn, args, repeat):
    fn(*args)  # warm-up / compile
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args(argv)
    if not _backend.USE_NUMBA:
        print("numba disabled (ANGMEAS_BACKEND=numpy or not installed): timing numpy only")
    inv_args, red_args = _inputs(a.size)
    cases = [
        ("logistic_inverse", _kernels.logistic_inverse_loop, _kernels.logistic_inverse_numpy, inv_args),
        ("field_reduce", _kernels.field_reduce_loop, _kernels.field_reduce_numpy, red_args),
    ]
    ok = True
    print(f"{'kernel':<18}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name, loop, vec, args in cases:
        t_np = _time(vec, args, a.repeat)
        if _backend.USE_NUMBA:
            t_nb = _time(loop, args, a.repeat)
            ra, rb = loop(*args), vec(*args)
            ra = ra if isinstance(ra, tuple) else (ra,)
            rb = rb if isinstance(rb, tuple) else (rb,)
            same = all(np.allclose(x, y, rtol=1e-12, atol=1e-12) for x, y in zip(ra, rb))
            ok &= same
            print(f"{name:<18}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>10.1f}{'' if same else '  MISMATCH'}")
        else:
            print(f"{name:<18}{'-':>12}{t_np:>12.4f}{'-':>10}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
