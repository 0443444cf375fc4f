"""Command line entry point: ``nested-spde <subcommand> [options]``."""
import argparse
import logging
import sys

import numpy as np

from . import harness
from ._accel import set_threads
from .config import load_config
from .errors import ConfigError, NestedSPDEError
from .oracle import oracle_value

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config with [model], [scheme], [experiment]")
    common.add_argument("--seed", type=int)
    common.add_argument("--replicates", type=int)
    common.add_argument("--out", help="CSV output path (default: stdout)")
    common.add_argument("--threads", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nested-spde",
                                description="Nested finite element SPDE convergence studies.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("converge", parents=[common], help="coupled strong-error study over levels")
    sub.add_parser("pathwise", parents=[common], help="relative errors of one coupled path")
    sub.add_parser("time-rate", parents=[common], help="strong error over a dt ladder")
    o = sub.add_parser("oracle", parents=[common], help="spectral reference E||u(T)||^2")
    o.add_argument("--T", type=float)
    o.add_argument("--gamma", type=float)
    o.add_argument("--cutoff", type=int)
    q = sub.add_parser("quad-check", parents=[common], help="sinc quadrature vs dense oracle")
    q.add_argument("--level", type=int, default=3)
    n = sub.add_parser("noise-check", parents=[common], help="increment covariance test")
    n.add_argument("--level", type=int, default=2)
    n.add_argument("--samples", type=int, default=10_000)
    return p


def _emit(text, path):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def run(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    set_threads(args.threads)
    cfg = load_config(args.config, seed=args.seed, replicates=args.replicates)
    out = args.out or cfg.output

    if args.command == "converge":
        _emit(harness.strong_error_study(cfg).csv_text(), out)
    elif args.command == "pathwise":
        report = harness.pathwise_error(cfg)
        if report.flagged:
            print("warning: reference norm is zero, errors are absolute", file=sys.stderr)
        _emit(report.csv_text(), out)
    elif args.command == "time-rate":
        _emit(harness.time_rate_study(cfg).csv_text(), out)
    elif args.command == "oracle":
        T = cfg.T if args.T is None else args.T
        gamma = cfg.gamma if args.gamma is None else args.gamma
        cutoff = cfg.oracle_cutoff if args.cutoff is None else args.cutoff
        if not T > 0 or not 0 < gamma <= 1 or cutoff < 1:
            raise ConfigError("oracle needs T > 0, gamma in (0, 1] and cutoff >= 1")
        value, tail = oracle_value(T, gamma, cfg.bc, cutoff, cfg.a2_reaction)
        _emit(f"bc={cfg.bc} T={T!r} gamma={gamma!r} cutoff={cutoff}\n"
              f"sum={value!r}\ntail_bound={tail!r}\n", out)
    elif args.command == "quad-check":
        report = harness.quad_check(level=args.level, bc=cfg.bc, seed=cfg.seed)
        _emit(report.csv_text(), out)
        ok = harness.quad_decay_ok(report)
        for gamma, passed in ok.items():
            print(f"gamma={gamma}: {'ok' if passed else 'FAILED'}", file=sys.stderr)
        if not all(ok.values()):
            return EXIT_NUMERICAL
    elif args.command == "noise-check":
        res = harness.noise_check(level=args.level, n_samples=args.samples, dt=cfg.dt,
                                  bc=cfg.bc, seed=cfg.seed)
        _emit(f"samples={res.n_samples}\nmax_z={res.max_z!r}\n"
              f"max_z_restricted={res.max_z_restricted!r}\n"
              f"status={'ok' if res.passed else 'FAILED'}\n", out)
        if not res.passed:
            return EXIT_NUMERICAL
    return EXIT_OK


def main(argv=None):
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NestedSPDEError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
