"""Numerical oracles and property checks for the solvers and metrics."""

from __future__ import annotations

import logging
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.optimize import minimize

from dujad.core.detection import DetectionReport, nearest_symbols
from dujad.core.evaluations import compute_metrics
from dujad.core.exporters import save_checkpoint
from dujad.core.fbs import (
    SolverState,
    eval_f,
    fbs_step,
    grad_f,
    pilot_only_solve,
    prox_h,
    prox_xd,
    prox_xd_row,
)
from dujad.core.scenario import Instance, design_pilots, frame_coherence, generate_trial, trial_rng, welch_bound
from dujad.core.unfolded import pme_approx, qpsk_conditional_mean, run_network, scaling_factor, soft_symbols
from dujad.detectors import StartingPoint, build_detector
from dujad.schemas import ExperimentConfig, LayerParams, ObjectiveParams, ScenarioConfig, TrainConfig, UnfoldedParams
from dujad.workflows.experiment import compare_methods, run_experiment
from dujad.workflows.training import train_checkpoint

_LOGGER = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-6
PROX_H_TOLERANCE = 1e-6
PROX_XD_TOLERANCE = 1e-4
PME_TOLERANCE = 1e-9
EQUIVALENCE_TOLERANCE = 1e-12
RECOVERY_TARGET = 0.95
PILOT_COHERENCE_SLACK = 1.1
TRAINING_GAIN = 0.1
DESK_COMPARISON_TRIALS = 200
_FD_STEP = 1e-6


@dataclass(slots=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def random_instance(
    rng: np.random.Generator,
    *,
    num_aps: int,
    antennas_per_ap: int,
    num_ues: int,
    pilot_length: int,
    data_length: int,
    box_half_width: float = math.sqrt(0.5),
) -> Instance:
    """Unstructured complex instance for algebraic checks."""

    rows = num_aps * antennas_per_ap

    def cgauss(*shape: int) -> np.ndarray:
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)

    xi = np.ones(num_ues, dtype=np.int8)
    X_D = nearest_symbols(cgauss(num_ues, data_length), box_half_width)
    H = cgauss(rows, num_ues)
    X_P = cgauss(num_ues, pilot_length)
    noise = 0.1 * cgauss(rows, pilot_length + data_length)
    return Instance(
        Y=H @ np.hstack([X_P, X_D]) + noise,
        H=H,
        X_P=X_P,
        X_D=X_D,
        xi=xi,
        noise=noise,
        qpsk_amplitude=box_half_width,
        antennas_per_ap=antennas_per_ap,
    )


def _random_state(rng: np.random.Generator, inst: Instance) -> SolverState:
    shape_h = (inst.stacked_antennas, inst.num_ues)
    shape_x = (inst.num_ues, inst.data_length)
    return SolverState.initial(
        rng.standard_normal(shape_h) + 1j * rng.standard_normal(shape_h),
        0.5 * (rng.uniform(-1, 1, shape_x) + 1j * rng.uniform(-1, 1, shape_x)),
    )


def finite_difference_gradient(state: SolverState, inst: Instance, step: float = _FD_STEP) -> Tuple[np.ndarray, np.ndarray]:
    """Central differences of ``eval_f`` over real and imaginary parts, packed as complex."""

    def partials(target: str) -> np.ndarray:
        base = getattr(state, target)
        result = np.zeros_like(base)
        for index in np.ndindex(base.shape):
            parts = []
            for unit in (1.0, 1j):
                plus, minus = state.copy(), state.copy()
                getattr(plus, target)[index] += unit * step
                getattr(minus, target)[index] -= unit * step
                parts.append((eval_f(plus, inst) - eval_f(minus, inst)) / (2.0 * step))
            result[index] = parts[0] + 1j * parts[1]
        return result

    return partials("H_est"), partials("XD_est")


def check_gradient(seeds: int = 10) -> CheckResult:
    """``grad_f`` against central finite differences on small random shapes."""

    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        antennas = int(rng.integers(1, 3))
        inst = random_instance(
            rng,
            num_aps=int(rng.integers(1, 8 // antennas + 1)),
            antennas_per_ap=antennas,
            num_ues=int(rng.integers(2, 7)),
            pilot_length=int(rng.integers(1, 5)),
            data_length=int(rng.integers(1, 6)),
        )
        state = _random_state(rng, inst)
        analytic = grad_f(state, inst)
        numeric = finite_difference_gradient(state, inst)
        for exact, approx in zip(analytic, numeric):
            error = np.linalg.norm(exact - approx) / max(np.linalg.norm(exact), 1e-12)
            worst = max(worst, float(error))
    return CheckResult("gradient", worst < GRADIENT_TOLERANCE, f"max relative error {worst:.2e} over {seeds} seeds")


def _as_real(vector: np.ndarray) -> np.ndarray:
    return np.concatenate([vector.real, vector.imag])


def _as_complex(vector: np.ndarray) -> np.ndarray:
    half = vector.size // 2
    return vector[:half] + 1j * vector[half:]


def prox_objective(candidate: np.ndarray, point: np.ndarray, threshold: float) -> float:
    """``½‖v − x‖² + t‖x‖`` for complex ``x``."""

    return 0.5 * float(np.sum(np.abs(point - candidate) ** 2)) + threshold * float(np.linalg.norm(candidate))


def check_prox_h(samples: int = 200) -> CheckResult:
    """Group shrinkage satisfies its optimality conditions and no search beats it."""

    rng = np.random.default_rng(1)
    worst_kkt, worst_gap = 0.0, 0.0
    for _ in range(samples):
        length = int(rng.integers(1, 5))
        point = rng.standard_normal(length) + 1j * rng.standard_normal(length)
        threshold = float(rng.uniform(0.0, 2.0 * np.linalg.norm(point)))
        result = prox_h(point, threshold)
        norm = np.linalg.norm(result)
        if norm > 0:
            kkt = np.linalg.norm(point - result - threshold * result / norm)
        else:
            kkt = max(np.linalg.norm(point) - threshold, 0.0)
        search = minimize(
            lambda x: prox_objective(_as_complex(x), point, threshold),
            _as_real(point),
            method="Powell",
            options={"xtol": 1e-10, "ftol": 1e-12, "maxiter": 20000},
        )
        gap = prox_objective(result, point, threshold) - float(search.fun)
        worst_kkt, worst_gap = max(worst_kkt, float(kkt)), max(worst_gap, gap)
    passed = worst_kkt < PROX_H_TOLERANCE and worst_gap < PROX_H_TOLERANCE
    return CheckResult("prox_h", passed, f"max KKT residual {worst_kkt:.2e}, max gap to search {worst_gap:.2e}")


def constrained_prox_oracle(point: np.ndarray, threshold: float, box_half_width: float) -> np.ndarray:
    """Box-constrained row prox by bounded quasi-Newton search."""

    bounds = [(-box_half_width, box_half_width)] * (2 * point.size)
    start = np.clip(_as_real(point), -box_half_width, box_half_width)
    search = minimize(
        lambda x: prox_objective(_as_complex(x), point, threshold),
        start,
        method="L-BFGS-B",
        bounds=bounds,
        options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 5000},
    )
    return _as_complex(search.x)


def check_prox_xd(samples: int = 200, box_half_width: float = math.sqrt(0.5)) -> CheckResult:
    """Shrink-then-clip against the constrained oracle; deviations are reported, the box must hold."""

    rng = np.random.default_rng(2)
    deviations: List[float] = []
    gaps: List[float] = []
    in_box = True
    for _ in range(samples):
        point = 1.5 * (rng.standard_normal(2) + 1j * rng.standard_normal(2))
        threshold = float(rng.uniform(0.0, 1.5))
        result = prox_xd_row(point, threshold, box_half_width)
        in_box &= bool(np.all(np.abs(result.real) <= box_half_width) and np.all(np.abs(result.imag) <= box_half_width))
        oracle = constrained_prox_oracle(point, threshold, box_half_width)
        deviations.append(float(np.linalg.norm(result - oracle)))
        gaps.append(prox_objective(result, point, threshold) - prox_objective(oracle, point, threshold))
    beyond = sum(deviation > PROX_XD_TOLERANCE for deviation in deviations)
    if beyond:
        _LOGGER.warning(
            "Shrink-then-clip deviates from the constrained prox on %d/%d rows (max %.3e, max objective gap %.3e)",
            beyond,
            samples,
            max(deviations),
            max(gaps),
        )
    bounded = all(math.isfinite(value) for value in deviations + gaps)
    detail = (
        f"{beyond}/{samples} rows beyond {PROX_XD_TOLERANCE:g}; max deviation {max(deviations):.2e}, "
        f"max objective gap {max(gaps):.2e}"
    )
    return CheckResult("prox_xd", in_box and bounded, detail)


def check_pme_factorization(inputs: int = 100) -> CheckResult:
    """Per-entry tanh form against enumeration over all QPSK vectors for R_D = 1..4."""

    rng = np.random.default_rng(3)
    box = math.sqrt(0.5)
    worst = 0.0
    for length in range(1, 5):
        for _ in range(inputs):
            x_hat = rng.standard_normal(length) + 1j * rng.standard_normal(length)
            ne = float(rng.uniform(0.1, 2.0))
            factorised = soft_symbols(x_hat, ne, box)
            enumerated = qpsk_conditional_mean(x_hat, ne, box)
            worst = max(worst, float(np.max(np.abs(factorised - enumerated))))
    return CheckResult("pme_factorization", worst < PME_TOLERANCE, f"max abs difference {worst:.2e}")


def check_alpha_bounds(samples: int = 100_000) -> CheckResult:
    """Scaling factors stay in [0, 1] and PME outputs stay in the box for arbitrary scalars."""

    rng = np.random.default_rng(4)
    box = math.sqrt(0.5)
    rows = 3.0 * (rng.standard_normal((samples, 4)) + 1j * rng.standard_normal((samples, 4)))
    rows[rng.random(samples) < 0.01] = 0.0
    lam = 3.0 * rng.standard_normal(samples)
    nu = 3.0 * rng.standard_normal(samples)
    alpha = scaling_factor(np.sum(np.abs(rows), axis=1), lam, nu)
    alpha_violations = int(np.sum((alpha < 0.0) | (alpha > 1.0) | ~np.isfinite(alpha)))
    layer = LayerParams(tau_h=1.0, tau_x=1.0, lam=float(lam[0]), nu=float(nu[0]), log_ne=float(rng.normal()))
    output, _ = pme_approx(rows, layer, box)
    box_violations = int(np.sum((np.abs(output.real) > box) | (np.abs(output.imag) > box)))
    return CheckResult(
        "alpha_bounds",
        alpha_violations == 0 and box_violations == 0,
        f"{alpha_violations} alpha and {box_violations} box violations over {samples} rows",
    )


def check_layer_equivalence(instances: int = 10) -> CheckResult:
    """One momentum-free layer with the data prox reproduces one baseline FBS step."""

    worst = 0.0
    for seed in range(instances):
        rng = np.random.default_rng(100 + seed)
        inst = random_instance(rng, num_aps=2, antennas_per_ap=2, num_ues=5, pilot_length=4, data_length=6)
        state = _random_state(rng, inst)
        tau = float(rng.uniform(0.01, 0.05))
        objective = ObjectiveParams(
            mu_h=float(rng.uniform(0.0, 2.0)),
            mu_x=float(rng.uniform(0.0, 2.0)),
            box_half_width=inst.qpsk_amplitude,
        )
        expected = fbs_step(state, inst, objective, tau)
        layer = LayerParams(tau_h=tau, tau_x=tau, eta_h=0.0, eta_x=0.0, mu_h=objective.mu_h)

        def data_prox(XD_hat: np.ndarray, lp: LayerParams) -> Tuple[np.ndarray, np.ndarray]:
            return prox_xd(XD_hat, lp.tau_x * objective.mu_x, objective.box_half_width), np.ones(XD_hat.shape[0])

        produced = run_network(inst, UnfoldedParams(layers=[layer]), state, data_step=data_prox).state
        worst = max(
            worst,
            float(np.max(np.abs(produced.H_est - expected.H_est))),
            float(np.max(np.abs(produced.XD_est - expected.XD_est))),
        )
    return CheckResult("layer_equivalence", worst <= EQUIVALENCE_TOLERANCE, f"max abs difference {worst:.2e}")


def _metric_case(
    xi: List[int],
    xi_hat: List[int],
    wrong: Dict[int, int],
    data_length: int,
) -> Tuple[Instance, DetectionReport]:
    box = math.sqrt(0.5)
    num_ues = len(xi)
    truth = np.full((num_ues, data_length), box + 1j * box) * np.asarray(xi)[:, None]
    detected = np.full((num_ues, data_length), box + 1j * box)
    for row, count in wrong.items():
        detected[row, :count] = -box + 1j * box
    inst = Instance(
        Y=np.zeros((1, 1 + data_length), dtype=complex),
        H=np.zeros((1, num_ues), dtype=complex),
        X_P=np.zeros((num_ues, 1), dtype=complex),
        X_D=truth,
        xi=np.asarray(xi, dtype=np.int8),
        noise=np.zeros((1, 1 + data_length), dtype=complex),
        qpsk_amplitude=box,
        antennas_per_ap=1,
    )
    xi_hat_arr = np.asarray(xi_hat, dtype=np.int8)
    report = DetectionReport(L=xi_hat_arr.astype(float), xi_hat=xi_hat_arr, XD_tilde=detected, XD_hat=detected)
    return inst, report


METRIC_CASES: Tuple[Tuple[List[int], List[int], Dict[int, int], int, float, float], ...] = (
    ([1, 0, 0, 0], [1, 0, 0, 0], {}, 8, 0.0, 0.0),
    ([1, 0, 0, 0], [1, 0, 0, 0], {0: 2}, 8, 0.0, 0.25),
    ([1, 0, 1, 0], [0, 1, 0, 1], {}, 4, 1.0, 0.0),
    ([1, 1, 0, 0, 1], [1, 0, 0, 1, 1], {1: 4, 4: 1}, 4, 0.4, 5 / 12),
    ([0, 0, 0], [1, 0, 0], {0: 3}, 3, 1 / 3, 0.0),
)


def check_metrics() -> CheckResult:
    """UDER and ASER against hand-counted cases."""

    failures = []
    for index, (xi, xi_hat, wrong, length, uder, aser) in enumerate(METRIC_CASES):
        inst, report = _metric_case(xi, xi_hat, wrong, length)
        got = compute_metrics(inst, report)
        if not (math.isclose(got[0], uder, abs_tol=1e-15) and math.isclose(got[1], aser, abs_tol=1e-15)):
            failures.append(f"case {index}: got {got}, expected {(uder, aser)}")
    return CheckResult("metrics", not failures, "; ".join(failures) or f"{len(METRIC_CASES)} cases match")


def noise_free_scenario() -> ScenarioConfig:
    """Tiny noise-free scenario with strong, shadow-free links."""

    return ScenarioConfig(
        num_ues=6,
        num_aps=2,
        antennas_per_ap=2,
        pilot_length=6,
        data_length=8,
        activity_prob=0.5,
        noise_scale=0.0,
        area_side=100.0,
        shadow_std=0.0,
    )


def noise_free_objective(scenario: ScenarioConfig) -> ObjectiveParams:
    return ObjectiveParams.for_scenario(scenario, mu_h=1e-3, mu_x=1e-3, energy_threshold=1e-2, tol=1e-6)


def noise_free_recovery_counts(trials: int) -> Tuple[int, int, int]:
    """Return ``(recovered, trials, overloaded)`` for 200-iteration FBS on noise-free trials.

    ``overloaded`` counts trials with more active UEs than receive antennas;
    they stay in the rate.
    """

    scenario = noise_free_scenario()
    objective = noise_free_objective(scenario)
    pilots = design_pilots(scenario)
    detector = build_detector("baseline4_200it", objective)
    successes = overloaded = 0
    for trial in range(trials):
        inst = generate_trial(scenario, pilots, trial_rng(0, scenario.num_aps, trial))
        overloaded += int(inst.num_active > inst.stacked_antennas)
        pilot = pilot_only_solve(inst, objective, objective.pilot_max_iter, objective.tol)
        outcome = detector.run(inst, StartingPoint(H=pilot.state.H_est, iterations=pilot.iterations))
        uder, aser = compute_metrics(inst, outcome.report)
        successes += int(uder == 0.0 and aser == 0.0)
    return successes, trials, overloaded


def check_noise_free_recovery(trials: int = 100) -> CheckResult:
    """Noise-free recovery rate of the 200-iteration baseline over all trials against the target."""

    successes, total, overloaded = noise_free_recovery_counts(trials)
    rate = successes / total if total else 0.0
    return CheckResult(
        "noise_free_recovery",
        rate >= RECOVERY_TARGET,
        f"{successes}/{total} trials recovered ({overloaded} with more active UEs than antennas)",
    )


def check_pilot_coherence(num_ues: int = 400, pilot_length: int = 50) -> CheckResult:
    """Designed pilots against the Welch bound at full scale."""

    scenario = ScenarioConfig(num_ues=num_ues, pilot_length=pilot_length)
    pilots = design_pilots(scenario)
    coherence = frame_coherence(pilots)
    bound = welch_bound(num_ues, pilot_length)
    ratio = coherence / bound if bound > 0 else 1.0
    return CheckResult(
        "pilot_coherence",
        ratio <= PILOT_COHERENCE_SLACK,
        f"coherence {coherence:.4f} is {ratio:.3f} x the Welch bound {bound:.4f} (N={num_ues}, R_P={pilot_length})",
    )


def desk_comparison_config(trials: int = DESK_COMPARISON_TRIALS) -> ExperimentConfig:
    """Desk-scale sweep of the trained detector against the 10-iteration baseline."""

    return ExperimentConfig(
        scenario=ScenarioConfig(),
        training=TrainConfig(seed=1),
        methods=["baseline4_10it", "dujad"],
        p_sweep=[4, 8, 12],
        trials=trials,
    )


def binary_entropy(probability: float) -> float:
    if probability <= 0.0 or probability >= 1.0:
        return 0.0
    return -probability * math.log(probability) - (1.0 - probability) * math.log1p(-probability)


def check_desk_comparison(config: Optional[ExperimentConfig] = None) -> CheckResult:
    """Train per AP count, then require DU-JAD to beat the 10-iteration baseline on paired trials.

    Every AP count must show a validation gain of at least ``TRAINING_GAIN`` in
    the layer loss, an activity head below the prior entropy, lower mean UDER
    and a 95% separated ASER improvement.
    """

    config = config or desk_comparison_config()
    failures: List[str] = []
    with tempfile.TemporaryDirectory() as directory:
        for num_aps in config.p_sweep:
            checkpoint, trace = train_checkpoint(config, num_aps)
            save_checkpoint(checkpoint, directory)
            fbs = trace[trace["stage"] == "fbs"]
            initial, best = float(fbs["val_loss"].iloc[0]), float(fbs["best_val_loss"].iloc[-1])
            if best > (1.0 - TRAINING_GAIN) * initial:
                failures.append(f"P={num_aps}: layer loss {initial:.4g} -> {best:.4g}")
            entropy = binary_entropy(config.scenario.activity_prob)
            if checkpoint.validation_loss_aud >= entropy:
                failures.append(f"P={num_aps}: head BCE {checkpoint.validation_loss_aud:.4g} >= prior {entropy:.4g}")
        results = run_experiment(config.model_copy(update={"checkpoint": Path(directory), "output": None}))

    comparisons = compare_methods(results)
    for metric in ("aser", "uder"):
        for record in comparisons[metric].itertuples(index=False):
            worse = record.mean_diff >= 0 or (metric == "aser" and not record.separated)
            if worse:
                failures.append(
                    f"{metric.upper()} P={record.P}: {record.mean_diff:.4g} [{record.ci_low:.4g}, {record.ci_high:.4g}]"
                )
    detail = "; ".join(failures) or (
        f"DU-JAD beats baseline4_10it at P={','.join(str(p) for p in config.p_sweep)} over {config.trials} trials"
    )
    return CheckResult("desk_comparison", not failures, detail)


CHECKS: Dict[str, Callable[[], CheckResult]] = {
    "gradient": check_gradient,
    "prox_h": check_prox_h,
    "prox_xd": check_prox_xd,
    "pme_factorization": check_pme_factorization,
    "alpha_bounds": check_alpha_bounds,
    "layer_equivalence": check_layer_equivalence,
    "metrics": check_metrics,
    "noise_free_recovery": check_noise_free_recovery,
    "pilot_coherence": check_pilot_coherence,
    "desk_comparison": check_desk_comparison,
}
# Minute-scale checks; they run only when named.
DEFAULT_CHECKS: Tuple[str, ...] = tuple(name for name in CHECKS if name not in {"pilot_coherence", "desk_comparison"})


def run_checks(names: Optional[Iterable[str]] = None) -> List[CheckResult]:
    """Run the named checks (the fast default set otherwise) and log one line per check."""

    selected = list(names) if names else list(DEFAULT_CHECKS)
    unknown = [name for name in selected if name not in CHECKS]
    if unknown:
        raise ValueError(f"Unknown checks: {', '.join(unknown)}")
    results = []
    for name in selected:
        start = time.perf_counter()
        result = CHECKS[name]()
        result.seconds = time.perf_counter() - start
        _LOGGER.info("%s check %s in %.2fs: %s", name, "passed" if result.passed else "FAILED", result.seconds, result.detail)
        results.append(result)
    return results


__all__ = [
    "CHECKS",
    "DEFAULT_CHECKS",
    "CheckResult",
    "binary_entropy",
    "check_alpha_bounds",
    "check_desk_comparison",
    "check_gradient",
    "check_layer_equivalence",
    "check_metrics",
    "check_noise_free_recovery",
    "check_pilot_coherence",
    "check_pme_factorization",
    "check_prox_h",
    "check_prox_xd",
    "constrained_prox_oracle",
    "desk_comparison_config",
    "finite_difference_gradient",
    "noise_free_objective",
    "noise_free_recovery_counts",
    "noise_free_scenario",
    "prox_objective",
    "random_instance",
    "run_checks",
]
