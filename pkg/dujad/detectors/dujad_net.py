"""Detector backed by a trained unfolded network."""

from __future__ import annotations

from dujad.core.detection import detect
from dujad.core.scenario import Instance
from dujad.core.unfolded import NetworkDivergenceError, run_network
from dujad.detectors import DetectorExecutionError, DetectorOutcome, StartingPoint
from dujad.schemas import Checkpoint


class UnfoldedJadDetector:
    """Runs the K trained layers and the soft AUD head of one checkpoint."""

    name = "dujad"

    def __init__(self, checkpoint: Checkpoint) -> None:
        self.checkpoint = checkpoint

    def run(self, inst: Instance, start: StartingPoint) -> DetectorOutcome:
        if inst.stacked_antennas != self.checkpoint.num_aps * inst.antennas_per_ap:
            raise DetectorExecutionError(
                f"Checkpoint for P={self.checkpoint.num_aps} cannot run an instance with "
                f"{inst.stacked_antennas // inst.antennas_per_ap} APs"
            )
        try:
            result = run_network(inst, self.checkpoint.network, start.solver_state(inst.data_length))
        except NetworkDivergenceError as exc:
            raise DetectorExecutionError(f"{self.name} diverged: {exc}") from exc
        report = detect(result.state, self.checkpoint.aud, inst.qpsk_amplitude)
        return DetectorOutcome(report=report, iterations=self.checkpoint.network.num_layers)


__all__ = ["UnfoldedJadDetector"]
