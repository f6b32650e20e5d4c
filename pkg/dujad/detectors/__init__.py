"""Shared utilities for the evaluated detection methods."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Protocol

import numpy as np

from dujad.core.detection import DetectionReport
from dujad.core.fbs import SolverState, TraceRecord
from dujad.core.scenario import Instance
from dujad.schemas import Checkpoint, ObjectiveParams


class DetectorExecutionError(RuntimeError):
    """Raised when a detector cannot produce a report for an instance."""


@dataclass(slots=True)
class StartingPoint:
    """Pilot-only channel estimate shared by all methods of one trial."""

    H: np.ndarray
    iterations: int

    def solver_state(self, data_length: int) -> SolverState:
        return SolverState.initial(self.H, np.zeros((self.H.shape[1], data_length), dtype=complex))


@dataclass(slots=True)
class DetectorOutcome:
    report: DetectionReport
    iterations: int
    trace: List[TraceRecord] = field(default_factory=list)


class Detector(Protocol):
    name: str

    def run(self, inst: Instance, start: StartingPoint) -> DetectorOutcome:
        ...


def build_detector(
    name: str,
    objective: ObjectiveParams,
    *,
    checkpoint: Optional[Checkpoint] = None,
) -> Detector:
    """Return the detector registered under ``name``."""

    if name == "baseline1":
        return PilotZeroForcingDetector(objective)
    if name == "baseline4_200it":
        return FbsJadDetector(objective, max_iter=objective.max_iter, name=name)
    if name == "baseline4_10it":
        return FbsJadDetector(objective, max_iter=10, name=name)
    if name == "dujad":
        if checkpoint is None:
            raise DetectorExecutionError("The dujad detector requires a trained checkpoint")
        return UnfoldedJadDetector(checkpoint)
    raise DetectorExecutionError(f"Unknown detection method: {name}")


from .baseline import FbsJadDetector, PilotZeroForcingDetector
from .dujad_net import UnfoldedJadDetector

__all__ = [
    "Detector",
    "DetectorExecutionError",
    "DetectorOutcome",
    "FbsJadDetector",
    "PilotZeroForcingDetector",
    "StartingPoint",
    "UnfoldedJadDetector",
    "build_detector",
]
