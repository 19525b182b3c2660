"""Command-line front end.

Exit codes: 0 success, 1 configuration error, 2 unreadable or tied data,
3 ``k > n``, 4 an identity exceeded its tolerance.
"""

from __future__ import annotations

import argparse
import io
import sys
from importlib import metadata

import numpy as np

from . import harness
from .empirical import EmptyTail, SampleParseError, TieError, phi_hat, read_sample
from .geometry import HALF_PI

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_K_TOO_LARGE = 3
EXIT_IDENTITY_FAILED = 4


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _common(sp):
    sp.add_argument("--config", help="flat 'key = value' file; flags override it")
    sp.add_argument("--alpha", help="logistic dependence parameter in (0, 1)")
    sp.add_argument("--p", help="norm index, >= 1 or 'inf'")
    sp.add_argument("--n", help="sample size(s), comma separated")
    sp.add_argument("--k", help="tail size(s), comma separated")
    sp.add_argument("--reps", help="replications")
    sp.add_argument("--seed", help="master seed")
    sp.add_argument("--theta-points", dest="theta_points", help="angle grid size (4m+1)")
    sp.add_argument("--workers", help="worker processes")
    sp.add_argument("--out", help="CSV output path; a .summary.txt file is written next to it")


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors; 2 is reserved for bad data
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    ap = _Parser(prog="angmeas", description="Angular measure estimation experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("identities", help="exact identities and model self-checks"))
    _common(sub.add_parser("expansion", help="expansion sup-gaps along an (n, k) ladder"))
    lim = sub.add_parser("limit", help="limit field covariances and KS comparisons")
    _common(lim)
    lim.add_argument("--fields", help="number of simulated fields")
    est = sub.add_parser("estimate", help="empirical angular measure of a two-column data file")
    est.add_argument("data", help="two numeric columns, optional header")
    est.add_argument("--k", required=True, help="number of upper order statistics")
    est.add_argument("--p", default="2", help="norm index, >= 1 or 'inf' (default 2)")
    est.add_argument("--theta-points", dest="theta_points", default="129")
    est.add_argument("--out", help="CSV output path (default stdout)")
    return ap


def _config(args, command):
    flags = {
        k: v
        for k, v in vars(args).items()
        if v is not None and k not in ("command", "config", "n", "k", "reps", "fields")
    }
    if command == "identities":
        if args.n is not None:
            flags["identity_n"] = args.n
        if args.k is not None:
            flags["identity_k"] = args.k
        if args.reps is not None:
            flags["reps"] = args.reps
    elif command == "limit":
        if args.n is not None:
            flags["ks_n"] = args.n
        if args.k is not None:
            flags["ks_k"] = args.k
        if args.reps is not None:
            flags["ks_reps"] = args.reps
        if args.fields is not None:
            flags["fields"] = args.fields
    else:
        if args.n is not None or args.k is not None:
            flags["n"], flags["k"] = args.n, args.k
        if args.reps is not None:
            flags["reps"] = args.reps
    base = harness.read_config_file(args.config) if args.config else {}
    return harness.ExperimentConfig.from_mapping({**base, **flags})


def _run_experiment(args, out, err):
    try:
        cfg = _config(args, args.command)
    except harness.ConfigError as exc:
        if exc.k_exceeds_n:
            print(f"error: k > n ({exc})", file=err)
            return EXIT_K_TOO_LARGE
        print("configuration error:", file=err)
        for f, msg in exc.fields.items():
            print(f"  {f}: {msg}", file=err)
        return EXIT_CONFIG
    run = {
        "identities": harness.run_identity_suite,
        "expansion": harness.run_expansion_experiment,
        "limit": harness.run_limit_experiment,
    }[args.command]
    report = run(cfg)
    if cfg.out:
        try:
            harness.emit(report, cfg.out)
        except OSError as exc:
            print(f"error: {exc}", file=err)
            return EXIT_CONFIG
    out.write(harness.summary_text(report))
    if args.command == "identities" and not report.ok:
        return EXIT_IDENTITY_FAILED
    return EXIT_OK


def estimate_table(sample, k, p, theta):
    """CSV text with columns ``theta, phi_hat, q_hat``."""
    ph = np.asarray(phi_hat(theta, sample, k, p), dtype=float)
    total = float(phi_hat(HALF_PI, sample, k, p))
    if total <= 0:
        raise EmptyTail("no observation passes the radius cut")
    buf = io.StringIO()
    buf.write("theta,phi_hat,q_hat\n")
    for th, v in zip(theta, ph):
        buf.write(f"{float(th):.17g},{float(v):.17g},{float(v) / total:.17g}\n")
    return buf.getvalue()


def _estimate(args, out, err):
    try:
        p = harness.parse_p(args.p)
        k = harness._int(args.k)
        pts = int(args.theta_points)
        if k < 1 or pts < 2:
            raise ValueError("k must be >= 1 and theta-points >= 2")
    except (ValueError, TypeError) as exc:
        print(f"configuration error: {exc}", file=err)
        return EXIT_CONFIG
    try:
        sample = read_sample(args.data)
    except OSError as exc:
        print(f"error: cannot read {args.data}: {exc.strerror}", file=err)
        return EXIT_DATA
    except (SampleParseError, TieError) as exc:
        print(f"error: {args.data}: {exc}", file=err)
        return EXIT_DATA
    if k > sample.n:
        print(f"error: k={k} exceeds the sample size n={sample.n}", file=err)
        return EXIT_K_TOO_LARGE
    try:
        text = estimate_table(sample, k, p, np.linspace(0.0, HALF_PI, pts))
    except EmptyTail as exc:
        print(f"error: {exc}", file=err)
        return EXIT_DATA
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        except OSError as exc:
            print(f"error: cannot write {args.out}: {exc.strerror}", file=err)
            return EXIT_CONFIG
    else:
        out.write(text)
    return EXIT_OK


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    args = build_parser().parse_args(argv)
    print(f"angmeas {_version()}", file=err)
    if args.command == "estimate":
        return _estimate(args, out, err)
    return _run_experiment(args, out, err)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
