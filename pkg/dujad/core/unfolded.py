"""K-layer unfolded FBS network with momentum and an approximate posterior-mean step."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from dujad.core.fbs import SolverState, descent_directions, prox_h_blocks
from dujad.core.scenario import Instance
from dujad.schemas import LayerParams, ObjectiveParams, StepNormalisation, UnfoldedParams

_LOGGER = logging.getLogger(__name__)

MAX_EXACT_PME_LENGTH = 8
MOMENTUM_PRESET_ETA = 0.2
_MIN_NE = 1e-300
_MIN_LIPSCHITZ = 1e-12

DataStep = Callable[[np.ndarray, LayerParams], Tuple[np.ndarray, np.ndarray]]


class NetworkDivergenceError(RuntimeError):
    """Raised when a layer of the unfolded network produces non-finite values."""

    def __init__(self, layer: int) -> None:
        super().__init__(f"Unfolded network produced non-finite values at layer {layer}")
        self.layer = layer


@dataclass(slots=True)
class NetworkResult:
    """Final state ``S^{K+1}`` plus the K×N matrix of PME scaling factors."""

    state: SolverState
    alpha: np.ndarray


def forward_step(state: SolverState, inst: Instance, lp: LayerParams) -> SolverState:
    """Momentum forward step with separate channel and data step sizes.

    The momentum buffers become ``D = τ·(descent direction) + η·D_prev`` and
    the forward iterate is the current estimate plus the new buffer.
    """

    direction_h, direction_x = descent_directions(state, inst)
    D_h = lp.tau_h * direction_h + lp.eta_h * state.D_h
    D_x = lp.tau_x * direction_x + lp.eta_x * state.D_x
    return SolverState(
        H_est=state.H_est + D_h,
        XD_est=state.XD_est + D_x,
        D_h=D_h,
        D_x=D_x,
        k=state.k,
    )


def normalised_layer(lp: LayerParams, state: SolverState, inst: Instance) -> LayerParams:
    """Layer scalars with ``τ_h`` and ``τ_x`` divided by the block Lipschitz constants of ``state``.

    The channel block uses ``‖[X_P, X_D]‖₂²`` and the data block ``‖H‖₂²``;
    a constant below ``_MIN_LIPSCHITZ`` leaves its step unscaled.
    """

    symbols = np.hstack([inst.X_P, state.XD_est])
    lipschitz_h = float(np.linalg.norm(symbols, ord=2)) ** 2
    lipschitz_x = float(np.linalg.norm(state.H_est, ord=2)) ** 2
    return lp.model_copy(
        update={
            "tau_h": lp.tau_h / lipschitz_h if lipschitz_h > _MIN_LIPSCHITZ else lp.tau_h,
            "tau_x": lp.tau_x / lipschitz_x if lipschitz_x > _MIN_LIPSCHITZ else lp.tau_x,
        }
    )


def backward_h(H_hat: np.ndarray, lp: LayerParams, antennas_per_ap: int) -> np.ndarray:
    """Group shrinkage of every AP block with threshold ``τ_h·max(μ_h, 0)``."""

    return prox_h_blocks(H_hat, lp.tau_h * lp.shrink_weight, antennas_per_ap)


def qpsk_vectors(length: int, box_half_width: float) -> np.ndarray:
    """All ``4**length`` QPSK vectors as rows."""

    points = box_half_width * np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j])
    return np.array(list(itertools.product(points, repeat=length)), dtype=complex).reshape(4**length, length)


def _check_exact_length(length: int) -> None:
    if length > MAX_EXACT_PME_LENGTH:
        raise ValueError(
            f"Exact PME enumerates 4**R_D vectors; R_D={length} exceeds the limit {MAX_EXACT_PME_LENGTH}"
        )


def pme_exact_row(x_hat: np.ndarray, ne: float, activity_prob: float, box_half_width: float) -> np.ndarray:
    """Posterior mean of a data row under the QPSK-or-silent prior and Gaussian error."""

    x_hat = np.asarray(x_hat, dtype=complex).ravel()
    _check_exact_length(x_hat.size)
    candidates = np.vstack([qpsk_vectors(x_hat.size, box_half_width), np.zeros((1, x_hat.size))])
    num_qpsk = candidates.shape[0] - 1
    with np.errstate(divide="ignore"):
        log_prior = np.concatenate(
            [np.full(num_qpsk, np.log(activity_prob) - np.log(num_qpsk)), [np.log1p(-activity_prob)]]
        )
    log_weight = log_prior - np.sum(np.abs(candidates - x_hat) ** 2, axis=1) / ne
    weights = np.exp(log_weight - logsumexp(log_weight))
    return weights @ candidates


def qpsk_conditional_mean(x_hat: np.ndarray, ne: float, box_half_width: float) -> np.ndarray:
    """Mean over all QPSK vectors weighted by the Gaussian kernel, by enumeration."""

    x_hat = np.asarray(x_hat, dtype=complex).ravel()
    _check_exact_length(x_hat.size)
    candidates = qpsk_vectors(x_hat.size, box_half_width)
    log_weight = -np.sum(np.abs(candidates - x_hat) ** 2, axis=1) / ne
    weights = np.exp(log_weight - logsumexp(log_weight))
    return weights @ candidates


def scaling_factor(l1_norms: np.ndarray, lam: float, nu: float) -> np.ndarray:
    """``α = min(max(λ‖x̂‖₁ − ν, 0)/‖x̂‖₁, 1)`` with ``α = 0`` for zero rows."""

    l1_norms = np.asarray(l1_norms, dtype=float)
    numerator = np.maximum(lam * l1_norms - nu, 0.0)
    ratio = np.divide(numerator, l1_norms, out=np.zeros_like(l1_norms), where=l1_norms > 0)
    return np.clip(ratio, 0.0, 1.0)


def soft_symbols(XD_hat: np.ndarray, ne: float, box_half_width: float) -> np.ndarray:
    """Per-entry conditional mean ``B·tanh(2B·Re/N_e) + jB·tanh(2B·Im/N_e)``."""

    gain = 2.0 * box_half_width / max(ne, _MIN_NE)
    with np.errstate(over="ignore"):
        return box_half_width * (np.tanh(gain * XD_hat.real) + 1j * np.tanh(gain * XD_hat.imag))


def pme_approx(XD_hat: np.ndarray, lp: LayerParams, box_half_width: float) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise approximate PME; returns ``(α·x̌, α)``."""

    alpha = scaling_factor(np.sum(np.abs(XD_hat), axis=1), lp.lam, lp.nu)
    return alpha[:, None] * soft_symbols(XD_hat, lp.ne, box_half_width), alpha


def pme_approx_row(x_hat: np.ndarray, lp: LayerParams, box_half_width: float) -> Tuple[np.ndarray, float]:
    """Approximate PME of a single data row."""

    row, alpha = pme_approx(np.asarray(x_hat, dtype=complex).reshape(1, -1), lp, box_half_width)
    return row[0], float(alpha[0])


def run_network(
    inst: Instance,
    params: UnfoldedParams,
    init: SolverState,
    *,
    data_step: Optional[DataStep] = None,
) -> NetworkResult:
    """Apply the K layers ``forward → channel shrinkage → PME`` to ``init``.

    ``data_step`` replaces the PME stage; it receives the forward data
    iterate and the layer scalars and returns ``(X_D, α)``. Under spectral
    step normalisation every stage sees the rescaled step sizes.
    """

    box = inst.qpsk_amplitude
    step = data_step or (lambda XD_hat, lp: pme_approx(XD_hat, lp, box))
    state = SolverState(
        H_est=np.array(init.H_est, dtype=complex),
        XD_est=np.array(init.XD_est, dtype=complex),
        D_h=np.array(init.D_h, dtype=complex),
        D_x=np.array(init.D_x, dtype=complex),
        k=init.k,
    )
    alphas = np.zeros((params.num_layers, inst.num_ues))
    for index, lp in enumerate(params.layers, start=1):
        if params.step_normalisation == "spectral":
            lp = normalised_layer(lp, state, inst)
        forward = forward_step(state, inst, lp)
        XD_next, alpha = step(forward.XD_est, lp)
        state = SolverState(
            H_est=backward_h(forward.H_est, lp, inst.antennas_per_ap),
            XD_est=XD_next,
            D_h=forward.D_h,
            D_x=forward.D_x,
            k=state.k + 1,
        )
        if not (np.all(np.isfinite(state.H_est)) and np.all(np.isfinite(state.XD_est))):
            raise NetworkDivergenceError(index)
        alphas[index - 1] = alpha
    return NetworkResult(state=state, alpha=alphas)


def preset_params(
    preset: Literal["baseline", "momentum"],
    num_layers: int,
    *,
    pilots: np.ndarray,
    channel_inits: Sequence[np.ndarray],
    objective: ObjectiveParams,
    activity_prob: float,
    step_normalisation: StepNormalisation = "none",
) -> UnfoldedParams:
    """Initial layer scalars that make every layer close to one classic FBS iteration.

    Without normalisation the step sizes come from the spectral norms of the
    pilots and of the initial channel estimates. Under ``"spectral"`` both
    multipliers start at 1, so each layer steps at ``1/L`` of its own input.
    ``momentum`` adds ``η = 0.2`` on both buffers.
    """

    if step_normalisation == "spectral":
        tau_h = tau_x = 1.0
    else:
        pilot_norm = float(np.linalg.norm(pilots, ord=2)) ** 2
        tau_h = 1.0 / pilot_norm if pilot_norm > 0 else 1.0
        channel_norms = [float(np.linalg.norm(H, ord=2)) ** 2 for H in channel_inits]
        mean_norm = float(np.mean(channel_norms)) if channel_norms else 0.0
        if mean_norm > 0:
            tau_x = 1.0 / mean_norm
        else:
            _LOGGER.warning("All initial channel estimates are zero; falling back to tau_x = tau_h")
            tau_x = tau_h
    eta = MOMENTUM_PRESET_ETA if preset == "momentum" else 0.0
    layer = LayerParams(
        tau_h=tau_h,
        tau_x=tau_x,
        eta_h=eta,
        eta_x=eta,
        mu_h=objective.mu_h,
        lam=1.0,
        nu=0.0,
        log_ne=0.0,
    )
    return UnfoldedParams(
        layers=[layer.model_copy() for _ in range(num_layers)],
        activity_prob=activity_prob,
        step_normalisation=step_normalisation,
    )


__all__ = [
    "MAX_EXACT_PME_LENGTH",
    "NetworkDivergenceError",
    "NetworkResult",
    "backward_h",
    "forward_step",
    "normalised_layer",
    "pme_approx",
    "pme_approx_row",
    "pme_exact_row",
    "preset_params",
    "qpsk_conditional_mean",
    "qpsk_vectors",
    "run_network",
    "scaling_factor",
    "soft_symbols",
]
