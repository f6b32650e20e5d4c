"""Utilities for writing and reading result tables, traces, datasets and checkpoints."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from dujad.core.fbs import TraceRecord
from dujad.core.scenario import Instance
from dujad.schemas import RESULT_COLUMNS, Checkpoint, ResultRow

FLOAT_FORMAT = "%.9g"
_COMPLEX_DTYPE = "<c16"
_DATASET_ARRAYS = ("Y", "H", "X_P", "X_D", "xi", "noise")


class ExportError(OSError):
    """Raised when a file cannot be written or parsed; carries the offending path."""

    def __init__(self, message: str, path: Path | str) -> None:
        super().__init__(f"{message}: {path}")
        self.path = Path(path)


def _write_frame(frame: pd.DataFrame, path: Path | str) -> Path:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(target, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as exc:
        raise ExportError(f"Could not write table ({exc.strerror or exc})", target) from exc
    return target


def results_frame(rows: Iterable[ResultRow]) -> pd.DataFrame:
    """Build the result table with the fixed column order and integer columns."""

    frame = pd.DataFrame.from_records([row.model_dump() for row in rows], columns=list(RESULT_COLUMNS))
    return frame.astype(
        {"method": str, "P": "int64", "trial": "int64", "uder": float, "aser": float, "iterations": "int64", "wall_time": float}
    )


def export_csv(table: pd.DataFrame | Sequence[ResultRow], path: Path | str) -> Path:
    """Write results as CSV: header, one row per entry, 9 significant digits."""

    frame = table if isinstance(table, pd.DataFrame) else results_frame(table)
    missing = [column for column in RESULT_COLUMNS if column not in frame.columns]
    if missing:
        raise ValueError(f"Result table is missing columns: {', '.join(missing)}")
    return _write_frame(frame.loc[:, list(RESULT_COLUMNS)], path)


def read_results_csv(path: Path | str) -> pd.DataFrame:
    """Parse a file written by :func:`export_csv`."""

    source = Path(path)
    try:
        frame = pd.read_csv(source, dtype={"method": str})
    except (OSError, pd.errors.ParserError) as exc:
        raise ExportError("Could not read result table", source) from exc
    if list(frame.columns) != list(RESULT_COLUMNS):
        raise ExportError(f"Unexpected result columns {list(frame.columns)}", source)
    return frame


def summary_path_for(results_path: Path | str) -> Path:
    """``results.csv`` → ``results.summary.csv``."""

    target = Path(results_path)
    return target.with_name(f"{target.stem}.summary.csv")


def write_summary(summary: pd.DataFrame, path: Path | str) -> Path:
    return _write_frame(summary, path)


def write_table(frame: pd.DataFrame, path: Path | str) -> Path:
    """Write any diagnostic table (training traces, comparisons) in the shared CSV format."""

    return _write_frame(frame, path)


def write_solver_trace(trace: Sequence[TraceRecord], path: Path | str) -> Path:
    """Dump a solver run as ``iteration,f,g,step`` rows."""

    frame = pd.DataFrame.from_records(
        [(record.iteration, record.f, record.g, record.step) for record in trace],
        columns=["iteration", "f", "g", "step"],
    )
    return _write_frame(frame, path)


def solver_trace_path(directory: Path | str, method: str, num_aps: int, trial: int) -> Path:
    return Path(directory) / f"{method}_P{int(num_aps)}_trial{int(trial)}.csv"


def checkpoint_path(directory: Path | str, num_aps: int) -> Path:
    return Path(directory) / f"dujad_P{int(num_aps)}.json"


def train_trace_path(directory: Path | str, num_aps: int) -> Path:
    return Path(directory) / f"trace_P{int(num_aps)}.csv"


def save_checkpoint(checkpoint: Checkpoint, directory: Path | str) -> Path:
    """Write ``checkpoint`` as pretty-printed JSON under ``directory``."""

    target = checkpoint_path(directory, checkpoint.num_aps)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(checkpoint.model_dump_json(indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ExportError(f"Could not write checkpoint ({exc.strerror or exc})", target) from exc
    return target


def load_checkpoint(directory: Path | str, num_aps: int) -> Checkpoint:
    """Read the checkpoint trained for ``num_aps`` APs."""

    source = checkpoint_path(directory, num_aps)
    try:
        payload = source.read_text(encoding="utf-8")
    except OSError as exc:
        raise ExportError("Checkpoint not found", source) from exc
    try:
        checkpoint = Checkpoint.model_validate_json(payload)
    except ValidationError as exc:
        raise ExportError(f"Checkpoint is malformed ({exc.error_count()} errors)", source) from exc
    if checkpoint.num_aps != num_aps:
        raise ExportError(f"Checkpoint was trained for P={checkpoint.num_aps}, not P={num_aps}", source)
    return checkpoint


def save_dataset(instances: Sequence[Instance], path: Path | str) -> Path:
    """Store instances as an ``.npz`` archive of stacked little-endian complex128 arrays.

    The ``dims`` array holds ``(trials, N, MP, M, R_P, R_D)``; ``B`` the QPSK
    half-amplitude.
    """

    if not instances:
        raise ValueError("Cannot save an empty dataset")
    first = instances[0]
    dims = np.array(
        [
            len(instances),
            first.num_ues,
            first.stacked_antennas,
            first.antennas_per_ap,
            first.pilot_length,
            first.data_length,
        ],
        dtype="<i8",
    )
    arrays = {
        name: np.stack([np.asarray(getattr(inst, name)) for inst in instances]).astype(
            "<i8" if name == "xi" else _COMPLEX_DTYPE
        )
        for name in _DATASET_ARRAYS
    }
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("wb") as handle:
            np.savez(handle, dims=dims, B=np.array([first.qpsk_amplitude], dtype="<f8"), **arrays)
    except OSError as exc:
        raise ExportError(f"Could not write dataset ({exc.strerror or exc})", target) from exc
    return target


def load_dataset(path: Path | str) -> List[Instance]:
    """Inverse of :func:`save_dataset`."""

    source = Path(path)
    try:
        with np.load(source) as archive:
            dims = archive["dims"]
            amplitude = float(archive["B"][0])
            arrays = {name: archive[name] for name in _DATASET_ARRAYS}
    except (OSError, KeyError, ValueError) as exc:
        raise ExportError("Could not read dataset", source) from exc
    trials, num_ues, _, antennas, pilot_length, data_length = (int(value) for value in dims)
    if arrays["X_P"].shape[1:] != (num_ues, pilot_length) or arrays["X_D"].shape[1:] != (num_ues, data_length):
        raise ExportError("Dataset arrays do not match the dims header", source)
    return [
        Instance(
            Y=arrays["Y"][index],
            H=arrays["H"][index],
            X_P=arrays["X_P"][index],
            X_D=arrays["X_D"][index],
            xi=arrays["xi"][index].astype(np.int8),
            noise=arrays["noise"][index],
            qpsk_amplitude=amplitude,
            antennas_per_ap=antennas,
        )
        for index in range(trials)
    ]


__all__ = [
    "FLOAT_FORMAT",
    "ExportError",
    "checkpoint_path",
    "export_csv",
    "load_checkpoint",
    "load_dataset",
    "read_results_csv",
    "results_frame",
    "save_checkpoint",
    "save_dataset",
    "solver_trace_path",
    "summary_path_for",
    "train_trace_path",
    "write_solver_trace",
    "write_summary",
    "write_table",
]
