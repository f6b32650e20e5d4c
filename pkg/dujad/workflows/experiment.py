"""Orchestrates the paired Monte-Carlo comparison of detection methods."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from dujad.core.config import ConfigurationError, worker_count
from dujad.core.evaluations import aggregate, compute_metrics, paired_comparison
from dujad.core.exporters import (
    ExportError,
    checkpoint_path,
    export_csv,
    load_checkpoint,
    results_frame,
    save_dataset,
    solver_trace_path,
    summary_path_for,
    write_solver_trace,
    write_summary,
)
from dujad.core.fbs import SolverDivergenceError, pilot_only_solve
from dujad.core.scenario import Instance, design_pilots, generate_trial, trial_rng
from dujad.detectors import DetectorExecutionError, StartingPoint, build_detector
from dujad.schemas import (
    METHOD_NAMES,
    Checkpoint,
    ExperimentConfig,
    ObjectiveParams,
    ResultRow,
    ScenarioConfig,
)

_LOGGER = logging.getLogger(__name__)


@dataclass(slots=True)
class TrialJob:
    """Everything one worker needs to evaluate every method on one trial."""

    scenario: ScenarioConfig
    objective: ObjectiveParams
    methods: Tuple[str, ...]
    checkpoint: Optional[Checkpoint]
    pilots: np.ndarray
    seed: int
    trial: int
    record_timing: bool
    trace_dir: Optional[Path] = None


@dataclass(slots=True)
class ExperimentOutcome:
    results: pd.DataFrame
    summary: pd.DataFrame
    comparisons: Dict[str, pd.DataFrame]


def _log_stage(stage: str, duration: float, *, num_aps: Optional[int] = None) -> None:
    suffix = f" [P={num_aps}]" if num_aps is not None else ""
    _LOGGER.info("%s stage completed in %.2fs%s", stage.capitalize(), duration, suffix)


def check_output_writable(path: Path) -> None:
    """Fail before any computation if ``path`` cannot be created."""

    parent = path.parent if str(path.parent) else Path(".")
    try:
        parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"Output directory cannot be created ({exc.strerror or exc})", parent) from exc
    if not os.access(parent, os.W_OK) or (path.exists() and not os.access(path, os.W_OK)):
        raise ExportError("Output path is not writable", path)


def load_checkpoints(cfg: ExperimentConfig) -> Dict[int, Checkpoint]:
    """Load one checkpoint per AP count when the trained detector is requested."""

    if "dujad" not in cfg.methods:
        return {}
    if cfg.checkpoint is None:
        raise ConfigurationError("Method 'dujad' requires a checkpoint directory (--checkpoint)")
    checkpoints: Dict[int, Checkpoint] = {}
    for num_aps in cfg.p_sweep:
        if not checkpoint_path(cfg.checkpoint, num_aps).is_file():
            raise ConfigurationError(
                f"Missing checkpoint for P={num_aps}: {checkpoint_path(cfg.checkpoint, num_aps)}"
            )
        checkpoints[num_aps] = load_checkpoint(cfg.checkpoint, num_aps)
    return checkpoints


def shared_start(inst: Instance, objective: ObjectiveParams) -> StartingPoint:
    """Pilot-only estimate that every method of a trial starts from."""

    result = pilot_only_solve(inst, objective, objective.pilot_max_iter, objective.tol)
    return StartingPoint(H=result.state.H_est, iterations=result.iterations)


def run_trial(job: TrialJob) -> List[ResultRow]:
    """Draw the trial instance and evaluate every method on it."""

    rng = trial_rng(job.seed, job.scenario.num_aps, job.trial)
    inst = generate_trial(job.scenario, job.pilots, rng)
    try:
        start = shared_start(inst, job.objective)
    except SolverDivergenceError as exc:
        raise DetectorExecutionError(f"Pilot-only estimation diverged on trial {job.trial}: {exc}") from exc

    rows: List[ResultRow] = []
    for method in job.methods:
        detector = build_detector(method, job.objective, checkpoint=job.checkpoint)
        began = time.perf_counter()
        outcome = detector.run(inst, start)
        elapsed = time.perf_counter() - began
        if job.trace_dir is not None and outcome.trace:
            write_solver_trace(
                outcome.trace, solver_trace_path(job.trace_dir, method, job.scenario.num_aps, job.trial)
            )
        uder, aser = compute_metrics(inst, outcome.report)
        rows.append(
            ResultRow(
                method=method,
                P=job.scenario.num_aps,
                trial=job.trial,
                uder=uder,
                aser=aser,
                iterations=outcome.iterations,
                wall_time=elapsed if job.record_timing else 0.0,
            )
        )
    return rows


def _ordered_methods(methods: Sequence[str]) -> Tuple[str, ...]:
    unique = dict.fromkeys(methods)
    return tuple(sorted(unique, key=METHOD_NAMES.index))


def _sort_rows(rows: List[ResultRow]) -> List[ResultRow]:
    return sorted(rows, key=lambda row: (METHOD_NAMES.index(row.method), row.P, row.trial))


def run_experiment(cfg: ExperimentConfig) -> pd.DataFrame:
    """Evaluate every method on paired trials for each AP count; return the result table."""

    if cfg.output is not None:
        check_output_writable(cfg.output)
    checkpoints = load_checkpoints(cfg)
    objective = cfg.objective or ObjectiveParams.for_scenario(cfg.scenario)
    methods = _ordered_methods(cfg.methods)
    workers = worker_count()

    pipeline_start = time.perf_counter()
    _LOGGER.info(
        "Starting experiment: methods=%s, P=%s, trials=%d, workers=%d",
        ",".join(methods),
        ",".join(str(p) for p in cfg.p_sweep),
        cfg.trials,
        workers,
    )
    rows: List[ResultRow] = []
    for num_aps in cfg.p_sweep:
        scenario = cfg.scenario_for(num_aps)
        start = time.perf_counter()
        pilots = design_pilots(scenario)
        _log_stage("pilot design", time.perf_counter() - start, num_aps=num_aps)

        jobs = [
            TrialJob(
                scenario=scenario,
                objective=objective,
                methods=methods,
                checkpoint=checkpoints.get(num_aps),
                pilots=pilots,
                seed=cfg.seed,
                trial=trial,
                record_timing=cfg.record_timing,
                trace_dir=cfg.trace_dir,
            )
            for trial in range(cfg.trials)
        ]
        start = time.perf_counter()
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for trial_rows in pool.map(run_trial, jobs):
                    rows.extend(trial_rows)
        else:
            for job in jobs:
                rows.extend(run_trial(job))
        _log_stage("evaluation", time.perf_counter() - start, num_aps=num_aps)

    _LOGGER.info("Experiment completed in %.2fs", time.perf_counter() - pipeline_start)
    return results_frame(_sort_rows(rows))


def compare_methods(results: pd.DataFrame) -> Dict[str, pd.DataFrame]:
    """Paired ASER and UDER comparison of the trained detector against the 10-iteration baseline."""

    present = set(results["method"])
    if not {"dujad", "baseline4_10it"} <= present:
        return {}
    comparisons = {
        metric: paired_comparison(results, "dujad", "baseline4_10it", metric=metric)
        for metric in ("aser", "uder")
    }
    for metric, table in comparisons.items():
        for record in table.itertuples(index=False):
            _LOGGER.info(
                "dujad - baseline4_10it %s at P=%d: %.4g [%.4g, %.4g]%s",
                metric.upper(),
                record.P,
                record.mean_diff,
                record.ci_low,
                record.ci_high,
                " (separated)" if record.separated else "",
            )
    return comparisons


def run_and_export(cfg: ExperimentConfig) -> ExperimentOutcome:
    """Run the sweep, then write results and the per-(method, P) summary."""

    results = run_experiment(cfg)
    start = time.perf_counter()
    summary = aggregate(results)
    comparisons = compare_methods(results)
    _log_stage("aggregation", time.perf_counter() - start)
    if cfg.output is not None:
        export_csv(results, cfg.output)
        write_summary(summary, summary_path_for(cfg.output))
        _LOGGER.info("Wrote %d result rows to %s", len(results), cfg.output)
    return ExperimentOutcome(results=results, summary=summary, comparisons=comparisons)


def generate_dataset(cfg: ExperimentConfig, num_aps: int) -> List[Instance]:
    """The instances ``eval`` would draw for ``num_aps``, in trial order."""

    scenario = cfg.scenario_for(num_aps)
    pilots = design_pilots(scenario)
    return [generate_trial(scenario, pilots, trial_rng(cfg.seed, num_aps, trial)) for trial in range(cfg.trials)]


def dataset_path(directory: Path | str, num_aps: int) -> Path:
    return Path(directory) / f"dataset_P{int(num_aps)}.npz"


def export_datasets(cfg: ExperimentConfig, directory: Path | str) -> List[Path]:
    """Write one ``.npz`` dataset per AP count of the sweep."""

    written = []
    for num_aps in cfg.p_sweep:
        start = time.perf_counter()
        written.append(save_dataset(generate_dataset(cfg, num_aps), dataset_path(directory, num_aps)))
        _log_stage("dataset", time.perf_counter() - start, num_aps=num_aps)
    return written


__all__ = [
    "ExperimentOutcome",
    "TrialJob",
    "check_output_writable",
    "compare_methods",
    "dataset_path",
    "export_datasets",
    "generate_dataset",
    "load_checkpoints",
    "run_and_export",
    "run_experiment",
    "run_trial",
    "shared_start",
]
