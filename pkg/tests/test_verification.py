from __future__ import annotations

import math
import os

import numpy as np
import pytest

from dujad.core.fbs import SolverState, grad_f
from dujad.workflows.verification import (
    CHECKS,
    DEFAULT_CHECKS,
    METRIC_CASES,
    binary_entropy,
    check_alpha_bounds,
    check_desk_comparison,
    check_gradient,
    check_layer_equivalence,
    check_metrics,
    check_pme_factorization,
    check_prox_h,
    check_prox_xd,
    constrained_prox_oracle,
    finite_difference_gradient,
    noise_free_recovery_counts,
    random_instance,
    run_checks,
)

SLOW_TESTS_ENV = "DUJAD_SLOW_TESTS"


def test_finite_difference_gradient_agrees_with_analytic_gradient() -> None:
    rng = np.random.default_rng(0)
    inst = random_instance(rng, num_aps=2, antennas_per_ap=1, num_ues=3, pilot_length=2, data_length=2)
    state = SolverState.initial(inst.H + 0.1, inst.X_D * 0.5)

    numeric = finite_difference_gradient(state, inst)
    analytic = grad_f(state, inst)

    for exact, approx in zip(analytic, numeric):
        np.testing.assert_allclose(approx, exact, rtol=1e-5, atol=1e-6)


def test_constrained_oracle_respects_the_box() -> None:
    point = np.array([3.0 - 2.0j, 0.1 + 0.05j])

    result = constrained_prox_oracle(point, 0.2, 0.5)

    assert np.all(np.abs(result.real) <= 0.5 + 1e-12)
    assert np.all(np.abs(result.imag) <= 0.5 + 1e-12)


@pytest.mark.parametrize(
    "check",
    [
        lambda: check_gradient(seeds=3),
        lambda: check_prox_h(samples=20),
        lambda: check_prox_xd(samples=20),
        lambda: check_pme_factorization(inputs=10),
        lambda: check_alpha_bounds(samples=2000),
        lambda: check_layer_equivalence(instances=3),
        check_metrics,
    ],
    ids=["gradient", "prox_h", "prox_xd", "pme_factorization", "alpha_bounds", "layer_equivalence", "metrics"],
)
def test_property_checks_pass(check) -> None:
    result = check()

    assert result.passed, result.detail


def test_metric_cases_cover_the_empty_activity_case() -> None:
    assert any(sum(xi) == 0 for xi, *_ in METRIC_CASES)


def test_noise_free_recovery_is_mostly_exact() -> None:
    successes, trials, overloaded = noise_free_recovery_counts(20)

    assert trials == 20
    assert 0 <= overloaded < trials
    assert successes / trials >= 0.7


def test_run_checks_selects_by_name() -> None:
    results = run_checks(["metrics"])

    assert [result.name for result in results] == ["metrics"]
    assert results[0].seconds >= 0.0


def test_run_checks_rejects_unknown_names() -> None:
    with pytest.raises(ValueError, match="bogus"):
        run_checks(["metrics", "bogus"])


def test_every_check_is_registered() -> None:
    assert set(CHECKS) == {
        "gradient",
        "prox_h",
        "prox_xd",
        "pme_factorization",
        "alpha_bounds",
        "layer_equivalence",
        "metrics",
        "noise_free_recovery",
        "pilot_coherence",
        "desk_comparison",
    }


def test_default_checks_leave_out_the_minute_scale_runs() -> None:
    assert set(DEFAULT_CHECKS) == set(CHECKS) - {"pilot_coherence", "desk_comparison"}


def test_binary_entropy_of_a_fair_coin_is_log_two() -> None:
    assert binary_entropy(0.5) == pytest.approx(math.log(2.0))
    assert binary_entropy(0.0) == 0.0
    assert binary_entropy(0.2) < binary_entropy(0.5)


@pytest.mark.slow
@pytest.mark.skipif(not os.getenv(SLOW_TESTS_ENV), reason=f"set {SLOW_TESTS_ENV}=1 to run")
def test_trained_detector_beats_the_short_baseline_at_desk_scale() -> None:
    result = check_desk_comparison()

    assert result.passed, result.detail
