"""Command line interface.

    hetmean run <config.toml> [--outdir DIR] [--no-figures]
    hetmean sweep --param n --values 1000,3000 [--config base.toml] ...
    hetmean accept [--suite primary] [--quick] [--outdir DIR]

HETMEAN_SEED overrides the config seed.  Runs emit results.csv plus a JSON
manifest (and figures unless disabled); accept prints one pass/fail line per
criterion and exits nonzero on any failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from .harness import (
    ExperimentConfig,
    compare_estimators,
    run_experiment,
    write_comparison,
)

__all__ = ["main"]


def _apply_seed_env(config: ExperimentConfig) -> ExperimentConfig:
    seed = os.environ.get("HETMEAN_SEED")
    if seed is None:
        return config
    return dataclasses.replace(config, seed=int(seed))


def _cmd_run(args) -> int:
    config = ExperimentConfig.from_toml(args.config)
    config = _apply_seed_env(config)
    if args.outdir is not None:
        config = dataclasses.replace(config, outdir=args.outdir)
    if args.no_figures:
        config = dataclasses.replace(config, figures=False)
    result = run_experiment(config)
    for summary in result.summaries:
        print(
            f"{summary.estimator:16s} n={summary.n:<7d} mean={summary.mean:.6f} "
            f"var={summary.var:.3e} mse={summary.mse:.3e}"
        )
    if len(config.estimators) >= 2:
        rows = compare_estimators(config, result)
        path = write_comparison(rows, Path(config.outdir))
        if config.figures:
            from . import figures

            figures.render_comparison(Path(config.outdir), rows)
        print(f"wrote {path}")
    print(f"wrote {result.csv_path}")
    print(f"wrote {result.manifest_path}")
    return 0


def _cmd_sweep(args) -> int:
    if args.config is not None:
        config = ExperimentConfig.from_toml(args.config)
    else:
        config = ExperimentConfig(
            seed=0,
            trials=args.trials or 100,
            beta=0.05,
            ns=(1000,),
            estimators=("public_k",),
            epsilon=1.0,
            delta=1e-6,
        )
    config = _apply_seed_env(config)
    values = [v for chunk in args.values for v in chunk.split(",") if v]
    if args.param == "n":
        config = dataclasses.replace(config, ns=tuple(int(v) for v in values))
    elif args.param == "epsilon":
        if len(values) != 1:
            raise SystemExit("epsilon sweep takes a single value per run")
        config = dataclasses.replace(config, epsilon=float(values[0]))
    else:
        raise SystemExit(f"unsupported sweep parameter {args.param!r}")
    if args.trials is not None:
        config = dataclasses.replace(config, trials=args.trials)
    if args.outdir is not None:
        config = dataclasses.replace(config, outdir=args.outdir)
    result = run_experiment(config)
    for summary in result.summaries:
        print(
            f"{summary.estimator:16s} n={summary.n:<7d} var={summary.var:.3e} "
            f"mse={summary.mse:.3e}"
        )
    print(f"wrote {result.csv_path}")
    return 0


def _cmd_accept(args) -> int:
    from .acceptance import run_suite

    results = run_suite(
        suite=args.suite, quick=args.quick, outdir=args.outdir, seed=args.seed
    )
    failed = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"{status}  {res.criterion:2d} {res.name:28s} {res.detail}")
        failed += not res.passed
    print(f"{len(results) - failed}/{len(results)} criteria passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetmean",
        description="Monte Carlo harness for heterogeneous private mean estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the experiment described by a TOML config")
    p_run.add_argument("config", help="path to the TOML experiment config")
    p_run.add_argument("--outdir", default=None)
    p_run.add_argument("--no-figures", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep one parameter over several values")
    p_sweep.add_argument("--param", required=True, choices=["n", "epsilon"])
    p_sweep.add_argument("--values", required=True, nargs="+")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--trials", type=int, default=None)
    p_sweep.add_argument("--outdir", default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_accept = sub.add_parser("accept", help="run the acceptance criteria suite")
    p_accept.add_argument("--suite", default="primary", choices=["primary"])
    p_accept.add_argument("--quick", action="store_true", help="reduced trial counts")
    p_accept.add_argument("--outdir", default=None)
    p_accept.add_argument("--seed", type=int, default=None)
    p_accept.set_defaults(func=_cmd_accept)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
