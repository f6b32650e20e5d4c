from __future__ import annotations

import math

import numpy as np
import pytest

from dujad.core.detection import (
    activity_features,
    activity_likelihood,
    decide_activity,
    detect,
    energy_activity,
    gate_by_activity,
    likelihood_from_features,
    nearest_symbols,
    report_from_decisions,
)
from dujad.core.fbs import SolverState
from dujad.schemas import AudParams

B = math.sqrt(0.5)


def _state() -> SolverState:
    H = np.array([[3.0, 0.0, 0.1], [4.0, 0.0, 0.0]], dtype=complex)
    XD = np.array([[0.5 + 0.5j, -0.5 - 0.1j], [0.0, 0.0], [0.1j, 0.0]], dtype=complex)
    return SolverState.initial(H, XD)


def test_activity_features_are_channel_and_data_energies() -> None:
    features = activity_features(_state())

    np.testing.assert_allclose(features[:, 0], [25.0, 0.0, 0.01])
    np.testing.assert_allclose(features[:, 1], [0.76, 0.0, 0.01])


def test_activity_likelihood_is_logistic_in_the_energies() -> None:
    aud = AudParams(omega_h=1.0, omega_x=2.0, t_th=1.0)

    L = activity_likelihood(_state(), aud)

    expected = 1.0 / (1.0 + np.exp(-(np.array([25.0, 0.0, 0.01]) + 2.0 * np.array([0.76, 0.0, 0.01]) - 1.0)))
    np.testing.assert_allclose(L, expected)
    assert np.all((L > 0.0) & (L < 1.0))


def test_decide_activity_uses_a_strict_threshold() -> None:
    decisions = decide_activity(np.array([0.2, 0.5, 0.51, 1.0]), 0.5)

    assert decisions.tolist() == [0, 0, 1, 1]


def test_raising_the_threshold_never_adds_active_users() -> None:
    L = np.random.default_rng(8).random(200)

    counts = [int(decide_activity(L, l_bar).sum()) for l_bar in np.linspace(0.0, 1.0, 41)]

    assert all(later <= earlier for earlier, later in zip(counts, counts[1:]))
    assert counts[-1] == 0


@pytest.mark.parametrize("factor", [0.01, 0.5, 3.0, 250.0])
def test_half_threshold_decisions_ignore_positive_head_scaling(factor: float) -> None:
    rng = np.random.default_rng(9)
    features = rng.exponential(2.0, size=(300, 2))
    aud = AudParams(omega_h=0.8, omega_x=1.7, t_th=3.0)
    scaled = AudParams(omega_h=factor * aud.omega_h, omega_x=factor * aud.omega_x, t_th=factor * aud.t_th)
    argument = features @ aud.head_vector()[:2] - aud.t_th
    assert np.min(np.abs(argument)) > 1e-6

    decisions = decide_activity(likelihood_from_features(features, aud), 0.5)

    np.testing.assert_array_equal(decisions, decide_activity(likelihood_from_features(features, scaled), 0.5))
    np.testing.assert_array_equal(decisions, (argument > 0).astype(np.int8))


def test_energy_activity_thresholds_column_energy() -> None:
    H = np.array([[1.0, 0.1, 0.0], [1.0, 0.2, 0.0]], dtype=complex)

    assert energy_activity(H, 0.1).tolist() == [1, 0, 0]


def test_nearest_symbols_maps_ties_to_the_positive_point() -> None:
    values = np.array([0.0, -0.3 + 2.0j, 5.0 - 0.0001j, -1.0 - 1.0j])

    symbols = nearest_symbols(values, B)

    np.testing.assert_allclose(symbols, B * np.array([1 + 1j, -1 + 1j, 1 - 1j, -1 - 1j]))


def test_gate_by_activity_zeroes_inactive_rows() -> None:
    XD = B * np.ones((3, 2), dtype=complex)

    gated = gate_by_activity(XD, np.array([1, 0, 1]))

    np.testing.assert_array_equal(gated[1], 0.0)
    np.testing.assert_array_equal(gated[[0, 2]], XD[[0, 2]])


def test_gate_by_activity_rejects_length_mismatch() -> None:
    with pytest.raises(ValueError):
        gate_by_activity(np.ones((3, 2), dtype=complex), np.array([1, 0]))


def test_detect_combines_head_and_slicer() -> None:
    aud = AudParams(omega_h=1.0, omega_x=0.0, t_th=0.5)

    report = detect(_state(), aud, B)

    assert report.xi_hat.tolist() == [1, 0, 0]
    np.testing.assert_array_equal(report.XD_hat[1:], 0.0)
    np.testing.assert_allclose(report.XD_tilde[1], B * np.array([1 + 1j, 1 + 1j]))
    assert report.as_row()["detected_active"] == 1


def test_report_from_decisions_uses_hard_likelihoods() -> None:
    XD_tilde = B * np.ones((2, 3), dtype=complex)

    report = report_from_decisions(np.array([0, 1]), XD_tilde)

    assert report.L.tolist() == [0.0, 1.0]
    np.testing.assert_array_equal(report.XD_hat[0], 0.0)
    np.testing.assert_array_equal(report.XD_tilde, XD_tilde)
