"""Command line entry point.

    marigold-bench run --config exp.ini [--seed N] [--out DIR] [--jobs J]
    marigold-bench validate --config exp.ini
    marigold-bench oracle NAME | all | list

Exit codes: 0 success, 1 configuration error, 2 numeric failure (a diverged
run, or a failed oracle).
"""

from __future__ import annotations

import argparse
import sys

from .bench import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, resolve_out_dir, run_experiment
from .config import parse_config
from .errors import ConfigError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="marigold-bench",
                                description="Multi-task weighting benchmarks on synthetic problems.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run every configured method on every seed")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, help="run only this seed (overrides run.seeds)")
    run.add_argument("--out", help="output directory (default: run.out, then $MARIGOLD_OUT, then ./runs)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")
    val = sub.add_parser("validate", help="parse and validate a configuration file")
    val.add_argument("--config", required=True)
    ora = sub.add_parser("oracle", help="run a named acceptance oracle ('list' shows names, 'all' runs all)")
    ora.add_argument("name")
    return p


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    if args.seed is not None and args.seed < 0:
        raise ConfigError("--seed must be >= 0")
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    seeds = None if args.seed is None else [args.seed]
    table = run_experiment(cfg, args.out, seeds=seeds, jobs=args.jobs)
    out = resolve_out_dir(cfg, args.out)
    for mt in table.methods:
        print(f"{mt:>10s}  status={table.status[mt]}  gap={table.final_gap[mt]:.3e}  "
              f"delta_k={table.delta_k[mt]:.3f}%  MR={table.mean_rank[mt]:.2f}")
    print(f"wrote {out / 'summary.csv'}")
    if table.exit_code != EXIT_OK:
        print("numeric failure: at least one run diverged", file=sys.stderr)
    return table.exit_code


def _cmd_validate(args) -> int:
    cfg = parse_config(args.config)
    print(f"{args.config}: ok ({cfg.problem.kind} problem, methods {', '.join(cfg.methods)}, "
          f"seeds {', '.join(map(str, cfg.run.seeds))}, {cfg.run.iterations} iterations)")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    from .oracles import ORACLES, run_oracle
    if args.name == "list":
        for name, fn in ORACLES.items():
            print(f"{name:22s} {fn.__doc__.splitlines()[0]}")
        return EXIT_OK
    names = list(ORACLES) if args.name == "all" else [args.name]
    if any(n not in ORACLES for n in names):
        print(f"unknown oracle {args.name!r}; available: {', '.join(ORACLES)}", file=sys.stderr)
        return EXIT_CONFIG
    code = EXIT_OK
    for n in names:
        res = run_oracle(n)
        print(res.line())
        if not res.passed:
            code = EXIT_NUMERIC
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return {"run": _cmd_run, "validate": _cmd_validate, "oracle": _cmd_oracle}[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
