#!/usr/bin/env python3
"""
Command-line front end for the Esscher importance-sampling experiments.
Reproduces the comparison tables and theta sweeps as CSV, prices single payoffs and runs the
validation suite.
"""

import argparse
import sys
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError

from cicd.experiments import ExperimentOutput, config_echo, run_fig, run_sweep, run_table, version_line
from cicd.settings import ExperimentConfig, RunSettings, load_manifest
from cicd.validate import validate
from engine.errors import EsscherError, SolverFailure
from engine.pricing import mc_price_is, mc_price_plain
from engine.esscher_opt import solve_optimal_measure
from engine.simulate import PathGrid, build_plan

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_SOLVER = 3
EXIT_VALIDATION = 4

MODEL_FLAGS = ["lambda", "mu", "zeta", "rho", "v0", "s0", "r", "alpha"]
PAYOFF_FLAGS = ["kind", "strike", "maturity", "n_monitor"]


class _Parser(argparse.ArgumentParser):
    """argparse with the usage exit code of this tool."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"[ERROR] {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="Root seed (default: ESSCHER_SEED or 42)")
    parser.add_argument("--paths", type=int, help="Monte Carlo paths per estimator")
    parser.add_argument("--steps", type=int, help="Euler steps per path")
    parser.add_argument("--workers", type=int, help="Threads for path generation")
    parser.add_argument("--out", "-o", help="Output CSV path (default: stdout)")
    parser.add_argument("--raw", action="store_true", help="Full-precision numbers in the CSV")
    parser.add_argument("--stable", action="store_true", help="Blank wall-clock columns for byte-stable output")


def _add_model(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model overrides")
    group.add_argument("--preset", help="Parameter preset from the manifest (heston, heston_jumps)")
    for name in MODEL_FLAGS:
        group.add_argument(f"--{name}", type=float, dest=name)


def _add_payoff(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("payoff overrides")
    group.add_argument("--kind", choices=["european_put", "asian_put"])
    group.add_argument("--strike", "-K", type=float)
    group.add_argument("--maturity", "-T", type=float)
    group.add_argument("--n-monitor", type=int, dest="n_monitor")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="esscher",
        description="Esscher importance sampling for Heston put options",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Reproduce the at-the-money maturity table
  esscher table --id 1 --seed 42 --out results/table1.csv

  # Variance as a function of theta for the jump model
  esscher fig --id 2

  # Price an Asian put with importance sampling
  esscher price --preset heston --kind asian_put --strike 1 --maturity 1.5 --n-monitor 200

  # Run the numerical self-checks
  esscher validate --report validation_report.md
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    table = sub.add_parser("table", help="Plain vs importance-sampling comparison table")
    table.add_argument("--id", type=int, required=True, choices=range(1, 8), dest="table_id")
    _add_common(table)
    _add_model(table)

    fig = sub.add_parser("fig", help="Estimator variance as a function of theta")
    fig.add_argument("--id", type=int, required=True, choices=[1, 2], dest="fig_id")
    _add_common(fig)
    _add_model(fig)

    price = sub.add_parser("price", help="Price one payoff")
    price.add_argument("--plain", action="store_true", help="Plain Monte Carlo only")
    _add_common(price)
    _add_model(price)
    _add_payoff(price)

    sweep = sub.add_parser("sweep", help="Theta sweep on an arbitrary European config")
    sweep.add_argument("--theta-min", type=float, required=True)
    sweep.add_argument("--theta-max", type=float, default=0.0)
    sweep.add_argument("--theta-step", type=float, default=0.02)
    _add_common(sweep)
    _add_model(sweep)
    _add_payoff(sweep)

    check = sub.add_parser("validate", help="Run the numerical self-checks")
    check.add_argument("--report", help="Write a markdown report to this path")
    check.add_argument("--seed", type=int, default=42)
    _add_model(check)
    return parser


## Helpers ----------------------------------------------------------------
def _settings(args: argparse.Namespace) -> RunSettings:
    settings = RunSettings()
    update = {
        "n_paths": args.paths,
        "n_steps": args.steps,
        "seed": args.seed,
        "workers": args.workers,
    }
    update = {k: v for k, v in update.items() if v is not None}
    if args.raw:
        update["raw"] = True
    return settings.model_copy(update=update)


def _overrides(args: argparse.Namespace, names: List[str]) -> Dict[str, Any]:
    return {name: getattr(args, name, None) for name in names if getattr(args, name, None) is not None}


def _budget(settings: RunSettings) -> Dict[str, Any]:
    return {
        "n_paths": settings.n_paths,
        "n_steps": settings.n_steps,
        "seed": settings.seed,
        "workers": settings.workers,
        "chunk_size": settings.chunk_size,
    }


def _custom_config(args: argparse.Namespace, settings: RunSettings) -> ExperimentConfig:
    overrides = _overrides(args, MODEL_FLAGS + PAYOFF_FLAGS)
    if args.preset:
        overrides["preset"] = args.preset
    if args.config:
        flags = {"n_paths": args.paths, "n_steps": args.steps, "seed": args.seed, "workers": args.workers}
        overrides.update({k: v for k, v in flags.items() if v is not None})
        return ExperimentConfig.from_file(args.config, overrides)
    data = {
        "preset": "heston",
        "payoff": {"kind": "european_put", "strike": 1.0, "maturity": 1.0, "n_monitor": 1},
        **_budget(settings),
    }
    return ExperimentConfig.from_dict(data, overrides)


def _emit(output: ExperimentOutput, args: argparse.Namespace, settings: RunSettings) -> None:
    if args.out:
        output.write(args.out, raw=settings.raw, stable=args.stable)
        print(f"✅ Wrote {args.out}")
    else:
        sys.stdout.write(output.to_csv(raw=settings.raw, stable=args.stable))


## Commands ----------------------------------------------------------------
def cmd_table(args: argparse.Namespace) -> int:
    settings = _settings(args)
    overrides = _overrides(args, MODEL_FLAGS)
    if args.preset:
        overrides["preset"] = args.preset
    _emit(run_table(args.table_id, settings, **overrides), args, settings)
    return EXIT_OK


def cmd_fig(args: argparse.Namespace) -> int:
    settings = _settings(args)
    overrides = _overrides(args, MODEL_FLAGS)
    if args.preset:
        overrides["preset"] = args.preset
    _emit(run_fig(args.fig_id, settings, **overrides), args, settings)
    return EXIT_OK


def cmd_price(args: argparse.Namespace) -> int:
    settings = _settings(args)
    config = _custom_config(args, settings)
    grid = PathGrid(config.payoff.maturity, config.n_steps, config.payoff.n_monitor)
    if args.plain:
        result = mc_price_plain(
            config.model, config.payoff, grid, config.n_paths, config.seed, workers=config.workers,
            chunk_size=config.chunk_size,
        )
        thetas: List[float] = []
    else:
        optimum = solve_optimal_measure(config.model, config.payoff)
        plan = build_plan(config.model, optimum.measure, grid)
        result = mc_price_is(
            config.model, config.payoff, plan, grid, config.n_paths, config.seed, workers=config.workers,
            chunk_size=config.chunk_size,
        )
        thetas = list(optimum.thetas)
    frame = pd.DataFrame(
        [[config.payoff.strike, config.payoff.maturity, result.price, result.std_error, result.estimator_kind,
          result.elapsed]],
        columns=["K", "T", "price", "std_error", "estimator", "time_s"],
    )
    metadata = ["price", config_echo(config)]
    if thetas:
        metadata.append(f"theta_1={thetas[0]:.10g} theta_n={thetas[-1]:.10g} n={len(thetas)}")
    metadata.append(version_line(load_manifest()))
    _emit(ExperimentOutput(frame, metadata), args, settings)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    settings = _settings(args)
    config = _custom_config(args, settings)
    if args.theta_step <= 0 or args.theta_min >= args.theta_max:
        print("[ERROR] need theta-min < theta-max and a positive theta-step", file=sys.stderr)
        return EXIT_USAGE
    count = int(np.floor((args.theta_max - args.theta_min) / args.theta_step + 1e-9))
    grid = [args.theta_min + k * args.theta_step for k in range(count + 1)]
    _emit(run_sweep(config, grid), args, settings)
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    overrides = _overrides(args, MODEL_FLAGS)
    ok, _ = validate(report_path=args.report, overrides=overrides or None, seed=args.seed)
    return EXIT_OK if ok else EXIT_VALIDATION


COMMANDS = {
    "table": cmd_table,
    "fig": cmd_fig,
    "price": cmd_price,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    load_dotenv(dotenv_path=".env", override=False)
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SolverFailure as e:
        print(f"[ERROR] solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except (ValidationError, EsscherError) as e:
        print(f"[ERROR] infeasible configuration: {e}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (KeyError, FileNotFoundError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
