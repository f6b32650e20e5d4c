"""FBS-based reference detectors."""

from __future__ import annotations

import numpy as np

from dujad.core.detection import energy_activity, nearest_symbols, report_from_decisions
from dujad.core.fbs import SolverDivergenceError, fbs_solve, zf_detect
from dujad.core.scenario import Instance
from dujad.detectors import DetectorExecutionError, DetectorOutcome, StartingPoint
from dujad.schemas import ObjectiveParams


class PilotZeroForcingDetector:
    """Energy-threshold AUD on the pilot-only estimate, then zero-forcing data detection."""

    name = "baseline1"

    def __init__(self, objective: ObjectiveParams) -> None:
        self.objective = objective

    def run(self, inst: Instance, start: StartingPoint) -> DetectorOutcome:
        """Return the report together with the pilot-stage iteration count."""

        box = self.objective.box_half_width
        active = energy_activity(start.H, self.objective.energy_threshold)
        equalised = zf_detect(start.H, active, inst.Y_D, box)
        # Missed UEs have no equalised row; they take the tie-break symbol.
        XD_tilde = np.where(
            active.astype(bool)[:, None],
            equalised,
            nearest_symbols(np.zeros_like(equalised), box),
        )
        return DetectorOutcome(report=report_from_decisions(active, XD_tilde), iterations=start.iterations)


class FbsJadDetector:
    """Joint channel and data FBS from the shared start, with an iteration cap."""

    def __init__(self, objective: ObjectiveParams, *, max_iter: int, name: str) -> None:
        self.objective = objective
        self.max_iter = max_iter
        self.name = name

    def run(self, inst: Instance, start: StartingPoint) -> DetectorOutcome:
        """Solve the joint problem and decide activity from the final channel energy."""

        try:
            result = fbs_solve(
                inst,
                self.objective,
                start.solver_state(inst.data_length),
                self.max_iter,
                self.objective.tol,
            )
        except SolverDivergenceError as exc:
            raise DetectorExecutionError(f"{self.name} diverged: {exc}") from exc
        active = energy_activity(result.state.H_est, self.objective.energy_threshold)
        XD_tilde = nearest_symbols(result.state.XD_est, self.objective.box_half_width)
        return DetectorOutcome(
            report=report_from_decisions(active, XD_tilde),
            iterations=result.iterations,
            trace=result.trace,
        )


__all__ = ["FbsJadDetector", "PilotZeroForcingDetector"]
