"""Two-stage fitting of the unfolded layers and the activity head."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize
from scipy.special import expit

from dujad.core.detection import activity_features, likelihood_from_features
from dujad.core.exporters import save_checkpoint, train_trace_path, write_table
from dujad.core.fbs import SolverDivergenceError, SolverState, pilot_only_solve
from dujad.core.scenario import Instance, design_pilots, generate_trial, trial_rng
from dujad.core.unfolded import NetworkDivergenceError, preset_params, run_network
from dujad.schemas import (
    AudParams,
    Checkpoint,
    ExperimentConfig,
    LayerParams,
    ObjectiveParams,
    ScenarioConfig,
    TrainConfig,
    UnfoldedParams,
)

_LOGGER = logging.getLogger(__name__)

BCE_EPSILON = 1e-12
TRAIN_STREAM = 1
VALIDATION_STREAM = 2
_SPSA_ALPHA = 0.602
_SPSA_GAMMA = 0.101
THRESHOLD_SHARPNESS = 4.0


class TrainingError(RuntimeError):
    """Raised when training cannot make progress; carries the partial trace."""

    def __init__(self, message: str, trace: "TrainTrace") -> None:
        super().__init__(message)
        self.trace = trace


@dataclass(slots=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    best_val_loss: float
    best_checkpoint: int


@dataclass(slots=True)
class TrainTrace:
    """Per-epoch losses and the id of the best-so-far checkpoint (0 is the initial one)."""

    stage: str
    records: List[EpochRecord] = field(default_factory=list)

    @property
    def best_val_loss(self) -> float:
        return self.records[-1].best_val_loss if self.records else math.inf

    def append(self, epoch: int, train_loss: float, val_loss: float) -> bool:
        """Record an epoch; return True if it is the new best checkpoint."""

        improved = not self.records or val_loss < self.best_val_loss
        best_id = epoch if improved else self.records[-1].best_checkpoint
        best_loss = val_loss if improved else self.best_val_loss
        self.records.append(EpochRecord(epoch, train_loss, val_loss, best_loss, best_id))
        return improved

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame.from_records(
            [
                (self.stage, r.epoch, r.train_loss, r.val_loss, r.best_val_loss, r.best_checkpoint)
                for r in self.records
            ],
            columns=["stage", "epoch", "train_loss", "val_loss", "best_val_loss", "best_checkpoint"],
        )
        return frame


@dataclass(slots=True)
class TrainingSample:
    inst: Instance
    start: SolverState


@dataclass(slots=True)
class TrainingData:
    train: List[TrainingSample]
    val: List[TrainingSample]


def loss_fbs(XD_out: np.ndarray, XD_true: np.ndarray) -> float:
    """Squared Frobenius distance between network output and true data."""

    if XD_out.shape != XD_true.shape:
        raise ValueError(f"Data shapes differ: {XD_out.shape} vs {XD_true.shape}")
    diff = XD_out - XD_true
    return float(np.vdot(diff, diff).real)


def loss_aud(L: np.ndarray, xi: np.ndarray, *, epsilon: float = BCE_EPSILON) -> float:
    """Binary cross-entropy summed over UEs, with ``L`` clipped to ``(ε, 1−ε)``."""

    clipped = np.clip(np.asarray(L, dtype=float), epsilon, 1.0 - epsilon)
    xi = np.asarray(xi, dtype=float)
    return float(-np.sum(xi * np.log(clipped) + (1.0 - xi) * np.log1p(-clipped)))


def _sample(
    scenario: ScenarioConfig,
    objective: ObjectiveParams,
    pilots: np.ndarray,
    rng: np.random.Generator,
) -> TrainingSample:
    inst = generate_trial(scenario, pilots, rng)
    H_init = pilot_only_solve(inst, objective, objective.pilot_max_iter, objective.tol).state.H_est
    return TrainingSample(
        inst=inst,
        start=SolverState.initial(H_init, np.zeros((inst.num_ues, inst.data_length), dtype=complex)),
    )


def build_training_data(
    scenario: ScenarioConfig,
    objective: ObjectiveParams,
    cfg: TrainConfig,
    *,
    pilots: Optional[np.ndarray] = None,
) -> TrainingData:
    """Simulate training and validation instances with their pilot-only starting points."""

    pilots = design_pilots(scenario) if pilots is None else pilots
    key = scenario.num_aps
    train = [
        _sample(scenario, objective, pilots, trial_rng(cfg.seed, key, TRAIN_STREAM, index))
        for index in range(cfg.n_train)
    ]
    val = [
        _sample(scenario, objective, pilots, trial_rng(cfg.seed, key, VALIDATION_STREAM, index))
        for index in range(cfg.n_val)
    ]
    return TrainingData(train=train, val=val)


def network_loss(params: UnfoldedParams, samples: Sequence[TrainingSample]) -> float:
    """Mean ``loss_fbs`` of the network over ``samples``; ``inf`` if the network diverges."""

    if not samples:
        raise ValueError("Cannot evaluate a loss over an empty sample set")
    total = 0.0
    try:
        for sample in samples:
            result = run_network(sample.inst, params, sample.start)
            total += loss_fbs(result.state.XD_est, sample.inst.X_D)
    except NetworkDivergenceError:
        return math.inf
    return total / len(samples)


def initial_params(data: TrainingData, objective: ObjectiveParams, cfg: TrainConfig, activity_prob: float) -> UnfoldedParams:
    """Apply the configured preset to the training set."""

    first = data.train[0].inst
    return preset_params(
        cfg.param_init,
        cfg.num_layers,
        pilots=first.X_P,
        channel_inits=[sample.start.H_est for sample in data.train],
        objective=objective,
        activity_prob=activity_prob,
        step_normalisation=cfg.step_normalisation,
    )


def _parameter_scale(params: UnfoldedParams, data_length: int, box_half_width: float) -> np.ndarray:
    vector = params.to_vector()
    scale = np.where(np.abs(vector) > 0, np.abs(vector), 1.0)
    width = len(LayerParams.FIELD_ORDER)
    nu_index = LayerParams.FIELD_ORDER.index("nu")
    scale[nu_index::width] = np.where(
        np.abs(vector[nu_index::width]) > 0, np.abs(vector[nu_index::width]), 0.1 * data_length * box_half_width
    )
    return scale


def _gain_sequences(cfg: TrainConfig, step: int, total_steps: int) -> Tuple[float, float]:
    if cfg.step_rule == "fixed":
        return cfg.base_lr, cfg.spsa_perturb
    stability = 0.1 * total_steps
    a_k = cfg.base_lr * ((1.0 + stability) / (step + 1.0 + stability)) ** _SPSA_ALPHA
    c_k = cfg.spsa_perturb / (step + 1.0) ** _SPSA_GAMMA
    return a_k, c_k


def _estimate_gradient(
    loss: Callable[[np.ndarray], float],
    point: np.ndarray,
    perturb: float,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> Optional[np.ndarray]:
    """SPSA or central-difference gradient; ``None`` if a perturbed loss is not finite."""

    if cfg.gradient == "spsa":
        delta = rng.choice(np.array([-1.0, 1.0]), size=point.size)
        plus, minus = loss(point + perturb * delta), loss(point - perturb * delta)
        if not (math.isfinite(plus) and math.isfinite(minus)):
            return None
        return (plus - minus) / (2.0 * perturb) * delta

    gradient = np.zeros_like(point)
    for index in range(point.size):
        offset = np.zeros_like(point)
        offset[index] = perturb
        plus, minus = loss(point + offset), loss(point - offset)
        if not (math.isfinite(plus) and math.isfinite(minus)):
            return None
        gradient[index] = (plus - minus) / (2.0 * perturb)
    return gradient


def train_fbs_layers(
    data: TrainingData,
    cfg: TrainConfig,
    init: UnfoldedParams,
) -> Tuple[UnfoldedParams, TrainTrace]:
    """Fit the per-layer scalars by minimising the mean ``loss_fbs`` over mini-batches.

    The search runs in coordinates scaled by the initial magnitudes. Updates
    that produce a non-finite loss are rejected and halve the step; with
    ``accept_only_improving`` a step is only taken if it lowers the batch
    loss. The returned parameters are the best validation checkpoint.
    """

    if not data.train or not data.val:
        raise ValueError("Training needs at least one training and one validation instance")
    box = data.train[0].inst.qpsk_amplitude
    scale = _parameter_scale(init, data.train[0].inst.data_length, box)
    activity_prob = init.activity_prob

    def to_params(point: np.ndarray) -> UnfoldedParams:
        return UnfoldedParams.from_vector(
            point * scale, activity_prob=activity_prob, step_normalisation=init.step_normalisation
        )

    rng = np.random.default_rng(cfg.seed)
    trace = TrainTrace(stage="fbs")
    point = init.to_vector() / scale
    best = init
    trace.append(0, network_loss(init, data.train), network_loss(init, data.val))
    _LOGGER.info("FBS layers: initial validation loss %.6g", trace.best_val_loss)

    batches_per_epoch = math.ceil(len(data.train) / cfg.batch_size)
    total_steps = max(cfg.epochs * batches_per_epoch, 1)
    step_multiplier = 1.0
    rejections = 0
    step = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(data.train))
        batch_losses: List[float] = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [data.train[index] for index in order[start : start + cfg.batch_size]]

            def batch_loss(candidate: np.ndarray) -> float:
                return network_loss(to_params(candidate), batch)

            a_k, c_k = _gain_sequences(cfg, step, total_steps)
            step += 1
            current = batch_loss(point)
            gradient = _estimate_gradient(batch_loss, point, c_k, cfg, rng)
            if gradient is None:
                rejections += 1
                step_multiplier *= 0.5
                _LOGGER.warning("Rejected a perturbation with non-finite loss (epoch %d)", epoch)
                if rejections >= cfg.max_rejections:
                    raise TrainingError(f"Aborted after {rejections} non-finite perturbations", trace)
                batch_losses.append(current)
                continue

            learning_rate = a_k * step_multiplier
            accepted = False
            for _ in range(cfg.max_rejections):
                candidate = point - learning_rate * gradient
                candidate_loss = batch_loss(candidate)
                if not math.isfinite(candidate_loss):
                    rejections += 1
                    step_multiplier *= 0.5
                    learning_rate *= 0.5
                    if rejections >= cfg.max_rejections:
                        raise TrainingError(f"Aborted after {rejections} non-finite updates", trace)
                    continue
                if not cfg.accept_only_improving or candidate_loss <= current:
                    point, current, accepted = candidate, candidate_loss, True
                    rejections = 0
                    break
                learning_rate *= 0.5
            if not accepted:
                _LOGGER.debug("No improving step on batch at epoch %d", epoch)
            batch_losses.append(current)

        params = to_params(point)
        val_loss = network_loss(params, data.val)
        if trace.append(epoch, float(np.mean(batch_losses)), val_loss):
            best = params
        _LOGGER.info(
            "FBS layers epoch %d: train %.6g, validation %.6g (best %.6g)",
            epoch,
            trace.records[-1].train_loss,
            val_loss,
            trace.best_val_loss,
        )
    return best, trace


def _mean_bce(theta: np.ndarray, features: np.ndarray, labels: np.ndarray, l_bar: float) -> float:
    aud = AudParams(omega_h=theta[0], omega_x=theta[1], t_th=theta[2], l_bar=l_bar)
    return loss_aud(likelihood_from_features(features, aud), labels) / max(len(labels), 1)


def _logistic_loss(theta: np.ndarray, features: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Unclipped mean cross-entropy of ``σ(f·ω − T_th)`` and its gradient in ``(ω_h, ω_x, T_th)``."""

    logits = features @ theta[:2] - theta[2]
    count = max(len(labels), 1)
    value = float(np.sum(np.logaddexp(0.0, logits) - labels * logits)) / count
    residual = expit(logits) - labels
    gradient = np.concatenate([features.T @ residual, [-np.sum(residual)]]) / count
    return value, gradient


def initial_aud_params(features: np.ndarray, l_bar: float = 0.5) -> AudParams:
    """Standardising start: ``ω = 1/std`` per feature and ``T_th`` at the mean energy."""

    spread = features.std(axis=0)
    omega = np.divide(1.0, spread, out=np.zeros_like(spread), where=spread > 0)
    return AudParams(
        omega_h=float(omega[0]),
        omega_x=float(omega[1]),
        t_th=float(omega @ features.mean(axis=0)),
        l_bar=l_bar,
    )


def threshold_aud_params(energy_threshold: float, l_bar: float = 0.5) -> AudParams:
    """Head that reproduces the channel-energy rule ``‖ĥ‖² > threshold`` at ``L̄ = 0.5``."""

    if energy_threshold <= 0:
        raise ValueError("The energy threshold must be positive")
    return AudParams(
        omega_h=THRESHOLD_SHARPNESS / energy_threshold,
        omega_x=0.0,
        t_th=THRESHOLD_SHARPNESS,
        l_bar=l_bar,
    )


def fit_aud_head(
    train_features: np.ndarray,
    train_labels: np.ndarray,
    val_features: np.ndarray,
    val_labels: np.ndarray,
    cfg: TrainConfig,
    *,
    init: Optional[AudParams] = None,
) -> Tuple[AudParams, TrainTrace]:
    """Fit ``(ω_h, ω_x, T_th)`` by L-BFGS on the mean per-UE cross-entropy.

    The search runs in coordinates where every weight is divided by the
    inverse spread of its feature, for at most ``aud_steps`` iterations.
    Each iterate is scored on the validation set and the best one wins.
    """

    init = init or initial_aud_params(train_features)
    l_bar = init.l_bar
    spread = train_features.std(axis=0)
    scale = np.concatenate([np.divide(1.0, spread, out=np.ones_like(spread), where=spread > 0), [1.0]])
    trace = TrainTrace(stage="aud")
    trace.append(
        0,
        _mean_bce(init.head_vector(), train_features, train_labels, l_bar),
        _mean_bce(init.head_vector(), val_features, val_labels, l_bar),
    )
    best = init
    if cfg.aud_steps == 0:
        return best, trace

    def objective(point: np.ndarray) -> Tuple[float, np.ndarray]:
        value, gradient = _logistic_loss(point * scale, train_features, train_labels)
        return value, gradient * scale

    def record(point: np.ndarray) -> None:
        nonlocal best
        theta = point * scale
        if not np.all(np.isfinite(theta)):
            raise TrainingError(f"Non-finite activity head at step {len(trace.records)}", trace)
        train_loss = _mean_bce(theta, train_features, train_labels, l_bar)
        val_loss = _mean_bce(theta, val_features, val_labels, l_bar)
        if trace.append(len(trace.records), train_loss, val_loss):
            best = init.with_head(theta)

    result = minimize(
        objective,
        init.head_vector() / scale,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={"maxiter": cfg.aud_steps},
    )
    _LOGGER.debug("Activity head search stopped after %d iterations: %s", result.nit, result.message)
    return best, trace


def network_features(params: UnfoldedParams, samples: Sequence[TrainingSample]) -> Tuple[np.ndarray, np.ndarray]:
    """Stack the per-UE energy features of the frozen network outputs with their labels."""

    features, labels = [], []
    for sample in samples:
        state = run_network(sample.inst, params, sample.start).state
        features.append(activity_features(state))
        labels.append(np.asarray(sample.inst.xi, dtype=float))
    return np.vstack(features), np.concatenate(labels)


def train_aud_head(
    data: TrainingData,
    frozen: UnfoldedParams,
    cfg: TrainConfig,
    *,
    l_bar: float = 0.5,
    energy_threshold: Optional[float] = None,
) -> Tuple[AudParams, TrainTrace]:
    """Fit the activity head on outputs of the frozen network, computed once per instance.

    With ``energy_threshold`` the search starts from whichever of the
    standardising head and the channel-energy rule has the lower training loss.
    """

    train_features, train_labels = network_features(frozen, data.train)
    val_features, val_labels = network_features(frozen, data.val)
    init = initial_aud_params(train_features, l_bar)
    if energy_threshold:
        rule = threshold_aud_params(energy_threshold, l_bar)
        rule_loss = _mean_bce(rule.head_vector(), train_features, train_labels, l_bar)
        if rule_loss < _mean_bce(init.head_vector(), train_features, train_labels, l_bar):
            _LOGGER.info("Activity head starts from the energy rule (training loss %.6g)", rule_loss)
            init = rule
    return fit_aud_head(train_features, train_labels, val_features, val_labels, cfg, init=init)


def _log_stage(stage: str, duration: float, num_aps: int) -> None:
    _LOGGER.info("%s stage completed in %.2fs [P=%d]", stage.capitalize(), duration, num_aps)


def train_checkpoint(config: ExperimentConfig, num_aps: int) -> Tuple[Checkpoint, pd.DataFrame]:
    """Train the network and head for one AP count; return the checkpoint and its trace table."""

    scenario = config.scenario_for(num_aps)
    objective = config.objective or ObjectiveParams.for_scenario(scenario)

    start = time.perf_counter()
    try:
        data = build_training_data(scenario, objective, config.training)
    except SolverDivergenceError as exc:
        raise TrainingError(f"Could not build the training set: {exc}", TrainTrace(stage="data")) from exc
    _log_stage("dataset", time.perf_counter() - start, num_aps)

    start = time.perf_counter()
    init = initial_params(data, objective, config.training, scenario.activity_prob)
    network, fbs_trace = train_fbs_layers(data, config.training, init)
    _log_stage("fbs training", time.perf_counter() - start, num_aps)

    start = time.perf_counter()
    aud, aud_trace = train_aud_head(data, network, config.training, energy_threshold=objective.energy_threshold)
    _log_stage("aud training", time.perf_counter() - start, num_aps)

    checkpoint = Checkpoint(
        num_aps=num_aps,
        scenario=scenario,
        network=network,
        aud=aud,
        validation_loss_fbs=fbs_trace.best_val_loss,
        validation_loss_aud=aud_trace.best_val_loss,
    )
    return checkpoint, pd.concat([fbs_trace.to_frame(), aud_trace.to_frame()], ignore_index=True)


def run_training(config: ExperimentConfig, directory: Path | str) -> List[Path]:
    """Train one checkpoint per AP count of the sweep and write it with its trace."""

    written: List[Path] = []
    pipeline_start = time.perf_counter()
    for num_aps in config.p_sweep:
        checkpoint, trace = train_checkpoint(config, num_aps)
        written.append(save_checkpoint(checkpoint, directory))
        write_table(trace, train_trace_path(directory, num_aps))
    _LOGGER.info("Training completed in %.2fs", time.perf_counter() - pipeline_start)
    return written


__all__ = [
    "BCE_EPSILON",
    "EpochRecord",
    "TrainTrace",
    "TrainingData",
    "TrainingError",
    "TrainingSample",
    "build_training_data",
    "fit_aud_head",
    "initial_aud_params",
    "initial_params",
    "loss_aud",
    "loss_fbs",
    "network_features",
    "network_loss",
    "run_training",
    "threshold_aud_params",
    "train_aud_head",
    "train_checkpoint",
    "train_fbs_layers",
]
