from __future__ import annotations

import logging
import math

import numpy as np
import pandas as pd
import pytest

from dujad.core.detection import report_from_decisions
from dujad.core.evaluations import (
    SUMMARY_COLUMNS,
    aggregate,
    average_symbol_error_rate,
    compute_metrics,
    paired_comparison,
    user_detection_error_rate,
)
from dujad.core.scenario import Instance

B = math.sqrt(0.5)


def _instance(xi: list[int], X_D: np.ndarray) -> Instance:
    num_ues = len(xi)
    return Instance(
        Y=np.zeros((2, 1 + X_D.shape[1]), dtype=complex),
        H=np.zeros((2, num_ues), dtype=complex),
        X_P=np.ones((num_ues, 1), dtype=complex),
        X_D=X_D,
        xi=np.array(xi, dtype=np.int8),
        noise=np.zeros((2, 1 + X_D.shape[1]), dtype=complex),
        qpsk_amplitude=B,
        antennas_per_ap=1,
    )


def _rows(records: list[tuple]) -> pd.DataFrame:
    return pd.DataFrame.from_records(records, columns=["method", "P", "trial", "uder", "aser"])


@pytest.mark.parametrize(
    ("xi", "xi_hat", "expected"),
    [
        ([1, 0, 1, 0], [1, 0, 1, 0], 0.0),
        ([1, 0, 1, 0], [0, 1, 0, 1], 1.0),
        ([1, 1, 0, 0], [1, 0, 0, 0], 0.25),
    ],
)
def test_user_detection_error_rate(xi: list[int], xi_hat: list[int], expected: float) -> None:
    assert user_detection_error_rate(np.array(xi), np.array(xi_hat)) == pytest.approx(expected)


def test_symbol_error_rate_counts_only_active_rows() -> None:
    X_D = B * np.array([[1 + 1j, 1 - 1j], [0, 0], [-1 + 1j, -1 - 1j]])
    detected = X_D.copy()
    detected[0, 1] = B * (1 + 1j)
    detected[1] = B * (1 + 1j)

    assert average_symbol_error_rate(np.array([1, 0, 1]), X_D, detected) == pytest.approx(0.25)


def test_symbol_error_rate_is_undefined_without_active_users() -> None:
    X_D = np.zeros((2, 3), dtype=complex)

    assert average_symbol_error_rate(np.zeros(2), X_D, X_D) is None


def test_symbol_error_rate_rejects_shape_mismatch() -> None:
    with pytest.raises(ValueError):
        average_symbol_error_rate(np.ones(2), np.zeros((2, 3)), np.zeros((2, 2)))


def test_compute_metrics_scores_pre_gating_symbols() -> None:
    X_D = B * np.array([[1 + 1j, 1 + 1j], [-1 - 1j, 1 - 1j]])
    inst = _instance([1, 1], X_D)
    report = report_from_decisions(np.array([1, 0]), X_D.copy())

    uder, aser = compute_metrics(inst, report)

    assert uder == pytest.approx(0.5)
    assert aser == 0.0
    assert report.aser_defined


def test_metrics_do_not_depend_on_user_order() -> None:
    rng = np.random.default_rng(12)
    xi = (rng.random(30) < 0.4).astype(int)
    xi[0] = 1
    X_D = B * (rng.choice([-1.0, 1.0], (30, 8)) + 1j * rng.choice([-1.0, 1.0], (30, 8))) * xi[:, None]
    xi_hat = np.where(rng.random(30) < 0.2, 1 - xi, xi).astype(np.int8)
    flips = np.where(rng.random((30, 8)) < 0.15, -1.0, 1.0)
    detected = np.where(xi[:, None] == 1, X_D * flips, B * (1 + 1j))
    order = rng.permutation(30)

    original = compute_metrics(_instance(list(xi), X_D), report_from_decisions(xi_hat, detected))
    permuted = compute_metrics(
        _instance(list(xi[order]), X_D[order]),
        report_from_decisions(xi_hat[order], detected[order]),
    )

    assert permuted == pytest.approx(original, rel=1e-12)
    assert original[0] > 0.0 and original[1] > 0.0


def test_compute_metrics_flags_instances_without_active_users(caplog: pytest.LogCaptureFixture) -> None:
    inst = _instance([0, 0], np.zeros((2, 2), dtype=complex))
    report = report_from_decisions(np.array([0, 1]), B * np.ones((2, 2), dtype=complex))

    with caplog.at_level(logging.WARNING, logger="dujad.core.evaluations"):
        uder, aser = compute_metrics(inst, report)

    assert (uder, aser) == (0.5, 0.0)
    assert not report.aser_defined
    assert "without active UEs" in caplog.text


def test_aggregate_orders_methods_and_computes_standard_errors() -> None:
    rows = _rows(
        [
            ("dujad", 4, 0, 0.1, 0.2),
            ("dujad", 4, 1, 0.3, 0.4),
            ("baseline1", 8, 0, 0.5, 0.5),
            ("baseline1", 4, 0, 0.2, 0.0),
            ("baseline1", 4, 1, 0.2, 0.2),
        ]
    )

    summary = aggregate(rows)

    assert list(summary.columns) == list(SUMMARY_COLUMNS)
    assert list(zip(summary["method"], summary["P"])) == [("baseline1", 4), ("baseline1", 8), ("dujad", 4)]
    dujad = summary.iloc[2]
    assert dujad["trials"] == 2
    assert dujad["uder_mean"] == pytest.approx(0.2)
    assert dujad["uder_stderr"] == pytest.approx(0.1)
    assert summary.iloc[1]["aser_stderr"] == 0.0


def test_aggregate_rejects_empty_tables() -> None:
    with pytest.raises(ValueError):
        aggregate(_rows([]))


def test_paired_comparison_separates_a_consistent_improvement() -> None:
    records = []
    for trial in range(10):
        reference = 0.3 + 0.01 * (trial % 3)
        records.append(("baseline4_10it", 4, trial, 0.1, reference))
        records.append(("dujad", 4, trial, 0.1, reference - 0.1 - 0.005 * (trial % 2)))

    comparison = paired_comparison(_rows(records), "dujad", "baseline4_10it")

    row = comparison.iloc[0]
    assert row["trials"] == 10
    assert row["mean_diff"] == pytest.approx(-0.1025)
    assert row["ci_low"] < row["mean_diff"] < row["ci_high"] < 0.0
    assert bool(row["separated"])


def test_paired_comparison_with_one_trial_has_an_unbounded_interval() -> None:
    rows = _rows([("dujad", 4, 0, 0.0, 0.1), ("baseline4_10it", 4, 0, 0.0, 0.3)])

    row = paired_comparison(rows, "dujad", "baseline4_10it").iloc[0]

    assert row["mean_diff"] == pytest.approx(-0.2)
    assert math.isinf(row["ci_high"])
    assert not bool(row["separated"])
