"""Key-value configuration files for scenarios, solvers and sweeps."""

from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, MutableMapping, Optional

from dotenv import dotenv_values
from pydantic import ValidationError

from dujad.schemas import ExperimentConfig, ObjectiveParams, ScenarioConfig, TrainConfig

_LOGGER = logging.getLogger(__name__)

WORKERS_ENV = "DUJAD_WORKERS"
LOG_LEVEL_ENV = "DUJAD_LOG_LEVEL"

_OBJECTIVE_PREFIX = "fbs_"
_TRAIN_PREFIX = "train_"
_EXPERIMENT_KEYS = {
    "methods",
    "trials",
    "p_sweep",
    "checkpoint",
    "output",
    "seed",
    "record_timing",
    "trace_dir",
}


class ConfigurationError(ValueError):
    """Raised when a configuration file or scenario is invalid."""


def _clean_mapping(raw: Mapping[str, Optional[str]]) -> Dict[str, str]:
    cleaned: Dict[str, str] = {}
    for key, value in raw.items():
        if value is None:
            continue
        cleaned[key.strip().lower()] = value.strip()
    return cleaned


def _describe_validation_error(section: str, exc: ValidationError) -> str:
    details = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error.get("loc", ()) if part != "__root__")
        field = f"{section}.{location}" if location else section
        details.append(f"field '{field}': {error.get('msg')}")
    return "Invalid configuration: " + "; ".join(details)


def _split_sections(values: Mapping[str, str]) -> tuple[Dict[str, Any], Dict[str, Any], Dict[str, Any], Dict[str, Any]]:
    scenario: Dict[str, Any] = {}
    objective: Dict[str, Any] = {}
    training: Dict[str, Any] = {}
    experiment: Dict[str, Any] = {}
    for key, value in values.items():
        if key.startswith(_OBJECTIVE_PREFIX):
            objective[key[len(_OBJECTIVE_PREFIX) :]] = value
        elif key.startswith(_TRAIN_PREFIX):
            training[key[len(_TRAIN_PREFIX) :]] = value
        elif key in _EXPERIMENT_KEYS:
            experiment[key] = value
        else:
            scenario[key] = value
    return scenario, objective, training, experiment


def build_experiment_config(
    values: Mapping[str, Optional[str]],
    *,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """Validate a flat key-value mapping into an :class:`ExperimentConfig`."""

    scenario_raw, objective_raw, training_raw, experiment_raw = _split_sections(_clean_mapping(values))

    try:
        scenario = ScenarioConfig.model_validate(scenario_raw)
    except ValidationError as exc:
        raise ConfigurationError(_describe_validation_error("scenario", exc)) from exc

    try:
        objective = ObjectiveParams.for_scenario(scenario, **objective_raw)
    except ValidationError as exc:
        raise ConfigurationError(_describe_validation_error("fbs", exc)) from exc

    try:
        training = TrainConfig.model_validate(training_raw)
    except ValidationError as exc:
        raise ConfigurationError(_describe_validation_error("train", exc)) from exc

    payload: MutableMapping[str, Any] = dict(experiment_raw)
    payload.update({key: value for key, value in (overrides or {}).items() if value is not None})
    payload.update({"scenario": scenario, "objective": objective, "training": training})
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as exc:
        raise ConfigurationError(_describe_validation_error("experiment", exc)) from exc


def load_experiment_config(
    path: Path | str,
    *,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """Read a ``KEY=value`` file and return the validated sweep configuration."""

    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigurationError(f"Config file not found: {config_path}")
    values = dotenv_values(config_path)
    _LOGGER.debug("Loaded %d config keys from %s", len(values), config_path)
    return build_experiment_config(values, overrides=overrides)


def worker_count(default: int = 1) -> int:
    """Return the worker pool size from ``DUJAD_WORKERS``."""

    raw = os.getenv(WORKERS_ENV)
    if not raw:
        return default
    try:
        workers = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    if workers < 1:
        raise ConfigurationError(f"{WORKERS_ENV} must be at least 1, got {workers}")
    return workers


__all__ = [
    "ConfigurationError",
    "LOG_LEVEL_ENV",
    "WORKERS_ENV",
    "build_experiment_config",
    "load_experiment_config",
    "worker_count",
]
