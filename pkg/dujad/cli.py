"""Command-line entry point: ``dujad {gen,train,eval,verify}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from dujad.core.config import LOG_LEVEL_ENV, ConfigurationError, load_experiment_config
from dujad.core.exporters import ExportError
from dujad.core.fbs import SolverDivergenceError
from dujad.core.unfolded import NetworkDivergenceError
from dujad.detectors import DetectorExecutionError
from dujad.schemas import ExperimentConfig
from dujad.workflows.experiment import export_datasets, run_and_export
from dujad.workflows.training import TrainingError, run_training
from dujad.workflows.verification import CHECKS, DEFAULT_CHECKS, run_checks

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

_RUNTIME_ERRORS = (
    ExportError,
    TrainingError,
    DetectorExecutionError,
    SolverDivergenceError,
    NetworkDivergenceError,
)


def _add_common_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="Key-value configuration file")
    parser.add_argument("--seed", type=int, help="Override the experiment seed")
    parser.add_argument("--out", type=Path, help="Output file or directory")
    parser.add_argument("--checkpoint", type=Path, help="Checkpoint directory")
    parser.add_argument("--trials", type=int, help="Override the number of Monte-Carlo trials")
    parser.add_argument("--methods", help="Comma-separated method names")
    parser.add_argument(
        "--log-level",
        default=os.getenv(LOG_LEVEL_ENV, "INFO"),
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        type=str.upper,
        help="Logging verbosity",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dujad",
        description="Simulate, train and benchmark deep-unfolded joint activity and data detection.",
    )
    subcommands = parser.add_subparsers(dest="command", required=True)

    gen = subcommands.add_parser("gen", help="Write the evaluation instances as .npz datasets")
    _add_common_options(gen)

    train = subcommands.add_parser("train", help="Fit one checkpoint per AP count")
    _add_common_options(train)

    evaluate = subcommands.add_parser("eval", help="Run the Monte-Carlo comparison")
    _add_common_options(evaluate)
    evaluate.add_argument("--timing", action="store_true", help="Record per-method wall time")
    evaluate.add_argument("--trace", type=Path, help="Directory for per-trial solver traces of the FBS baselines")

    verify = subcommands.add_parser("verify", help="Run the oracle and property checks")
    _add_common_options(verify)
    verify.add_argument(
        "--checks",
        help=f"Comma-separated subset of: {', '.join(CHECKS)} (default: {', '.join(DEFAULT_CHECKS)})",
    )
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {
        "seed": args.seed,
        "trials": args.trials,
        "methods": args.methods,
        "checkpoint": args.checkpoint,
    }
    if args.command == "eval":
        overrides["output"] = args.out
        overrides["record_timing"] = True if args.timing else None
        overrides["trace_dir"] = args.trace
    return overrides


def _load(parser: argparse.ArgumentParser, args: argparse.Namespace) -> ExperimentConfig:
    if args.config is None:
        parser.error(f"{args.command} requires --config")
    return load_experiment_config(args.config, overrides=_overrides(args))


def _configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _run(parser: argparse.ArgumentParser, args: argparse.Namespace) -> int:
    if args.command == "verify":
        names = [name.strip() for name in args.checks.split(",") if name.strip()] if args.checks else None
        unknown = [name for name in names or [] if name not in CHECKS]
        if unknown:
            parser.error(f"unknown checks: {', '.join(unknown)}")
        results = run_checks(names)
        for result in results:
            status = "PASS" if result.passed else "FAIL"
            print(f"{status} {result.name}: {result.detail} ({result.seconds:.2f}s)")
        return EXIT_OK if all(result.passed for result in results) else EXIT_RUNTIME

    config = _load(parser, args)
    if args.command == "gen":
        if args.out is None:
            parser.error("gen requires --out (dataset directory)")
        for path in export_datasets(config, args.out):
            print(path)
        return EXIT_OK

    if args.command == "train":
        directory = config.checkpoint or args.out
        if directory is None:
            parser.error("train requires --checkpoint (output directory)")
        for path in run_training(config, directory):
            print(path)
        return EXIT_OK

    outcome = run_and_export(config)
    if config.output is None:
        print(outcome.summary.to_string(index=False))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and run the requested subcommand; return the exit status."""

    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.log_level)
    try:
        return _run(parser, args)
    except ConfigurationError as exc:
        print(f"dujad: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _RUNTIME_ERRORS as exc:
        print(f"dujad: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


__all__ = ["build_parser", "main"]
