from __future__ import annotations

import math

import numpy as np
import pytest

from dujad.core.evaluations import compute_metrics
from dujad.core.scenario import Instance
from dujad.detectors import (
    DetectorExecutionError,
    FbsJadDetector,
    PilotZeroForcingDetector,
    StartingPoint,
    UnfoldedJadDetector,
    build_detector,
)
from dujad.schemas import AudParams, Checkpoint, LayerParams, ObjectiveParams, ScenarioConfig, UnfoldedParams

B = math.sqrt(0.5)


def _instance() -> Instance:
    rng = np.random.default_rng(0)
    xi = np.array([1, 0, 1, 1], dtype=np.int8)
    H = (rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))) * xi[None, :]
    signs = rng.choice(np.array([-1.0, 1.0]), size=(4, 3, 2))
    X_D = B * (signs[..., 0] + 1j * signs[..., 1]) * xi[:, None]
    X_P = np.fft.fft(np.eye(4))
    noise = np.zeros((4, 7), dtype=complex)
    return Instance(
        Y=H @ np.hstack([X_P, X_D]),
        H=H,
        X_P=X_P,
        X_D=X_D,
        xi=xi,
        noise=noise,
        qpsk_amplitude=B,
        antennas_per_ap=2,
    )


def _objective() -> ObjectiveParams:
    return ObjectiveParams(mu_h=0.01, mu_x=0.01, box_half_width=B, energy_threshold=0.05)


def _checkpoint(num_aps: int) -> Checkpoint:
    return Checkpoint(
        num_aps=num_aps,
        scenario=ScenarioConfig(num_aps=num_aps),
        network=UnfoldedParams(layers=[LayerParams(tau_h=0.01, tau_x=0.05)] * 3),
        aud=AudParams(omega_h=1.0, t_th=0.05),
    )


@pytest.mark.parametrize("name", ["baseline2", "dnn"])
def test_unknown_methods_are_rejected(name: str) -> None:
    with pytest.raises(DetectorExecutionError, match="Unknown"):
        build_detector(name, _objective())


def test_registry_builds_each_method() -> None:
    assert isinstance(build_detector("baseline1", _objective()), PilotZeroForcingDetector)
    assert build_detector("baseline4_10it", _objective()).max_iter == 10
    assert build_detector("baseline4_200it", _objective()).max_iter == 200
    assert isinstance(build_detector("dujad", _objective(), checkpoint=_checkpoint(2)), UnfoldedJadDetector)
    with pytest.raises(DetectorExecutionError):
        build_detector("dujad", _objective())


def test_long_baseline_follows_the_configured_iteration_budget() -> None:
    objective = _objective().model_copy(update={"max_iter": 37})

    assert build_detector("baseline4_200it", objective).max_iter == 37
    assert build_detector("baseline4_10it", objective).max_iter == 10


def test_fbs_baseline_exposes_its_solver_trace() -> None:
    inst = _instance()

    outcome = build_detector("baseline4_10it", _objective()).run(inst, StartingPoint(H=np.zeros_like(inst.H), iterations=0))

    assert len(outcome.trace) == outcome.iterations
    assert [record.iteration for record in outcome.trace] == list(range(1, outcome.iterations + 1))
    assert PilotZeroForcingDetector(_objective()).run(inst, StartingPoint(H=inst.H, iterations=0)).trace == []


def test_zero_forcing_baseline_is_exact_with_a_perfect_start() -> None:
    inst = _instance()

    outcome = PilotZeroForcingDetector(_objective()).run(inst, StartingPoint(H=inst.H, iterations=7))

    uder, aser = compute_metrics(inst, outcome.report)
    assert (uder, aser) == (0.0, 0.0)
    assert outcome.iterations == 7
    np.testing.assert_allclose(outcome.report.XD_tilde[1], B * np.array([1 + 1j] * 3))


def test_fbs_baseline_respects_the_iteration_cap() -> None:
    inst = _instance()

    outcome = FbsJadDetector(_objective(), max_iter=10, name="baseline4_10it").run(
        inst, StartingPoint(H=inst.H, iterations=1)
    )

    assert 1 <= outcome.iterations <= 10
    assert outcome.report.xi_hat[[0, 2, 3]].tolist() == [1, 1, 1]
    assert outcome.report.XD_tilde.shape == (4, 3)


def test_unfolded_detector_rejects_foreign_ap_counts() -> None:
    inst = _instance()

    with pytest.raises(DetectorExecutionError, match="P=3"):
        UnfoldedJadDetector(_checkpoint(3)).run(inst, StartingPoint(H=inst.H, iterations=1))


def test_unfolded_detector_reports_its_layer_count() -> None:
    inst = _instance()

    outcome = UnfoldedJadDetector(_checkpoint(2)).run(inst, StartingPoint(H=inst.H, iterations=1))

    assert outcome.iterations == 3
    assert outcome.report.L.shape == (4,)
    assert np.all((outcome.report.L >= 0) & (outcome.report.L <= 1))
