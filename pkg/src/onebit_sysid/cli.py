"""Command-line entry point: ``onebit-sysid {run,crlb,diagnose}``.

Exit status is 0 on success, 1 on invalid input or configuration, 2 on any
other failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .config import load_config
from .errors import ValidationError
from .harness import crlb_for_config, diagnose, run_experiment

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="onebit-sysid", description="RLS-SA identification over a one-bit channel")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a seeded Monte Carlo experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--runs", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--parallel", type=int, default=1)
    run.add_argument("--save-runs", action="store_true", help="persist every run (needed by 'diagnose')")
    run.add_argument("--no-crlb", action="store_true", help="skip the long-trajectory CRLB estimate")

    c = sub.add_parser("crlb", help="print the limit CRLB and its trace")
    c.add_argument("--config", required=True)

    d = sub.add_parser("diagnose", help="recompute diagnostics from persisted runs")
    d.add_argument("--in", dest="in_dir", required=True)
    d.add_argument("--out")
    d.add_argument("--no-crlb", action="store_true")
    return p


def _cmd_run(args) -> int:
    cfg = load_config(args.config).with_overrides(runs=args.runs, seed=args.seed, output_dir=args.out)
    res = run_experiment(cfg, parallel=args.parallel, save_runs=args.save_runs, with_crlb=not args.no_crlb)
    agg = res.aggregate
    k = int(agg.grid[-1])
    print(f"runs={agg.n_runs} horizon={cfg.horizon} out={res.out_dir}")
    print(f"k={k}  k*MSE(RLS-SA)={agg.k_mse[-1]:.6g}  k*MSE(RLS)={agg.k_mse_rls[-1]:.6g}")
    if res.crlb is not None:
        print(f"trace(Sigma_CR_bar)={res.crlb.trace_bar:.6g}")
    return EXIT_OK


def _cmd_crlb(args) -> int:
    cfg = load_config(args.config)
    res = crlb_for_config(cfg)
    print("Sigma_CR_bar =")
    with np.printoptions(precision=6, suppress=True):
        print(res.sigma_cr_bar)
    print(f"trace = {res.trace_bar:.3g}")
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    res = diagnose(args.in_dir, args.out, with_crlb=not args.no_crlb)
    d = res.diagnostics
    print(f"runs={d['runs']} written to {res.out_dir}")
    for k, v in d["tail_fraction"].items():
        if v is not None:
            print(f"  k={k:>6}  tail_fraction={v:.4f}  as_stat={d['as_stat'][k]:.4g}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "crlb": _cmd_crlb, "diagnose": _cmd_diagnose}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
