"""Box-constrained forward-backward splitting for joint activity and data detection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from dujad.core.detection import nearest_symbols
from dujad.core.scenario import Instance
from dujad.schemas import ObjectiveParams

_LOGGER = logging.getLogger(__name__)

_MAX_BACKTRACKS = 60
_TINY = 1e-300


class SolverDivergenceError(RuntimeError):
    """Raised when the objective of a solver run stops being finite."""

    def __init__(self, message: str, *, iteration: int, step: float, objective: float) -> None:
        super().__init__(f"{message} (iteration={iteration}, step={step:.3e}, objective={objective})")
        self.iteration = iteration
        self.step = step
        self.objective = objective


@dataclass(slots=True)
class SolverState:
    """Iterate ``S = [Hᴴ, X_D]ᴴ`` plus the momentum buffers."""

    H_est: np.ndarray
    XD_est: np.ndarray
    D_h: np.ndarray
    D_x: np.ndarray
    k: int = 0

    @classmethod
    def initial(cls, H_est: np.ndarray, XD_est: np.ndarray) -> "SolverState":
        """Start a run from the given estimates with zero momentum."""

        return cls(
            H_est=np.array(H_est, dtype=complex),
            XD_est=np.array(XD_est, dtype=complex),
            D_h=np.zeros_like(H_est, dtype=complex),
            D_x=np.zeros_like(XD_est, dtype=complex),
            k=0,
        )

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack([self.H_est, self.XD_est.conj().T])

    def copy(self) -> "SolverState":
        return SolverState(
            H_est=self.H_est.copy(),
            XD_est=self.XD_est.copy(),
            D_h=self.D_h.copy(),
            D_x=self.D_x.copy(),
            k=self.k,
        )


@dataclass(slots=True)
class TraceRecord:
    iteration: int
    f: float
    g: float
    step: float


@dataclass(slots=True)
class SolveResult:
    """Outcome of :func:`fbs_solve`."""

    state: SolverState
    iterations: int
    objective: float
    converged: bool
    trace: List[TraceRecord] = field(default_factory=list)


def _check_shapes(state: SolverState, inst: Instance) -> None:
    expected_h = (inst.stacked_antennas, inst.num_ues)
    expected_x = (inst.num_ues, inst.data_length)
    if state.H_est.shape != expected_h or state.XD_est.shape != expected_x:
        raise ValueError(
            f"State shapes H{state.H_est.shape}/X_D{state.XD_est.shape} do not match "
            f"instance shapes H{expected_h}/X_D{expected_x}"
        )


def _residual(state: SolverState, inst: Instance) -> np.ndarray:
    return inst.Y - state.H_est @ np.hstack([inst.X_P, state.XD_est])


def descent_directions(state: SolverState, inst: Instance) -> Tuple[np.ndarray, np.ndarray]:
    """Return ``((Y − HX)Xᴴ, Hᴴ(Y_D − H X_D))``, the negative gradient of f."""

    _check_shapes(state, inst)
    residual = _residual(state, inst)
    X = np.hstack([inst.X_P, state.XD_est])
    direction_h = residual @ X.conj().T
    direction_x = state.H_est.conj().T @ residual[:, inst.pilot_length :]
    return direction_h, direction_x


def eval_f(state: SolverState, inst: Instance) -> float:
    """Smooth data-fit term ½‖Y − H[X_P, X_D]‖_F²."""

    _check_shapes(state, inst)
    residual = _residual(state, inst)
    return 0.5 * float(np.vdot(residual, residual).real)


def _block_norms(H: np.ndarray, antennas_per_ap: int) -> np.ndarray:
    rows, cols = H.shape
    return np.linalg.norm(H.reshape(rows // antennas_per_ap, antennas_per_ap, cols), axis=1)


def in_box(XD: np.ndarray, box_half_width: float) -> bool:
    return bool(np.all(np.abs(XD.real) <= box_half_width) and np.all(np.abs(XD.imag) <= box_half_width))


def eval_g(state: SolverState, params: ObjectiveParams, antennas_per_ap: int) -> float:
    """Group penalties plus the box indicator; ``inf`` outside the box."""

    if not in_box(state.XD_est, params.box_half_width):
        return math.inf
    channel = params.mu_h * float(_block_norms(state.H_est, antennas_per_ap).sum())
    data = params.mu_x * float(np.linalg.norm(state.XD_est, axis=1).sum())
    return channel + data


def grad_f(state: SolverState, inst: Instance) -> Tuple[np.ndarray, np.ndarray]:
    """Gradient of f with respect to (H, X_D).

    Real and imaginary parts of each entry are the partial derivatives with
    respect to the real and imaginary parts of the variable.
    """

    direction_h, direction_x = descent_directions(state, inst)
    return -direction_h, -direction_x


def _shrink_factor(norms: np.ndarray, threshold: float) -> np.ndarray:
    return np.where(norms > 0, np.maximum(norms - threshold, 0.0) / np.maximum(norms, _TINY), 0.0)


def prox_h(block: np.ndarray, threshold: float) -> np.ndarray:
    """Group soft-thresholding of one AP block."""

    block = np.asarray(block, dtype=complex)
    return _shrink_factor(np.linalg.norm(block), max(threshold, 0.0)) * block


def prox_h_blocks(H_hat: np.ndarray, threshold: float, antennas_per_ap: int) -> np.ndarray:
    """Apply :func:`prox_h` to every (n, p) block of ``H_hat``."""

    rows, cols = H_hat.shape
    blocks = H_hat.reshape(rows // antennas_per_ap, antennas_per_ap, cols)
    scale = _shrink_factor(np.linalg.norm(blocks, axis=1), max(threshold, 0.0))
    return (blocks * scale[:, None, :]).reshape(rows, cols)


def _clip_box(values: np.ndarray, box_half_width: float) -> np.ndarray:
    return np.clip(values.real, -box_half_width, box_half_width) + 1j * np.clip(
        values.imag, -box_half_width, box_half_width
    )


def prox_xd_row(row: np.ndarray, threshold: float, box_half_width: float) -> np.ndarray:
    """Row shrinkage followed by clipping to the QPSK box."""

    row = np.asarray(row, dtype=complex)
    shrunk = _shrink_factor(np.linalg.norm(row), max(threshold, 0.0)) * row
    return _clip_box(shrunk, box_half_width)


def prox_xd(XD_hat: np.ndarray, threshold: float, box_half_width: float) -> np.ndarray:
    """Apply :func:`prox_xd_row` to every row of ``XD_hat``."""

    scale = _shrink_factor(np.linalg.norm(XD_hat, axis=1), max(threshold, 0.0))
    return _clip_box(XD_hat * scale[:, None], box_half_width)


def fbs_step(
    state: SolverState,
    inst: Instance,
    params: ObjectiveParams,
    tau: float,
    *,
    directions: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> SolverState:
    """One forward step with step ``tau`` followed by the backward prox."""

    direction_h, direction_x = directions if directions is not None else descent_directions(state, inst)
    H_hat = state.H_est + tau * direction_h
    XD_hat = state.XD_est + tau * direction_x
    return SolverState(
        H_est=prox_h_blocks(H_hat, tau * params.mu_h, inst.antennas_per_ap),
        XD_est=prox_xd(XD_hat, tau * params.mu_x, params.box_half_width),
        D_h=np.zeros_like(state.D_h),
        D_x=np.zeros_like(state.D_x),
        k=state.k + 1,
    )


def _initial_step(state: SolverState, inst: Instance) -> float:
    X = np.hstack([inst.X_P, state.XD_est])
    lipschitz = max(np.linalg.norm(X, ord=2) ** 2, np.linalg.norm(state.H_est, ord=2) ** 2 if state.H_est.size else 0.0)
    return 1.0 / max(lipschitz, 1e-12)


def _real_inner(a: Tuple[np.ndarray, np.ndarray], b: Tuple[np.ndarray, np.ndarray]) -> float:
    return float(np.vdot(a[0], b[0]).real + np.vdot(a[1], b[1]).real)


def fbs_solve(
    inst: Instance,
    params: ObjectiveParams,
    init: SolverState,
    max_iter: int,
    tol: float,
) -> SolveResult:
    """Run box-constrained FBS until the relative change of S drops below ``tol``.

    Steps follow the Barzilai-Borwein rule (or stay fixed) and are halved
    until the local quadratic upper bound holds when backtracking is on.
    """

    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    state = SolverState.initial(init.H_est, init.XD_est)
    _check_shapes(state, inst)
    antennas = inst.antennas_per_ap
    tau = params.tau or _initial_step(state, inst)

    f_current = eval_f(state, inst)
    directions = descent_directions(state, inst)
    trace: List[TraceRecord] = []
    converged = False
    iterations = 0
    objective = f_current + eval_g(state, params, antennas)

    for iteration in range(1, max_iter + 1):
        for _ in range(_MAX_BACKTRACKS):
            candidate = fbs_step(state, inst, params, tau, directions=directions)
            f_candidate = eval_f(candidate, inst)
            if not params.backtracking:
                break
            delta = (candidate.H_est - state.H_est, candidate.XD_est - state.XD_est)
            model = (
                f_current
                - _real_inner(directions, delta)
                + _real_inner(delta, delta) / (2.0 * tau)
            )
            if math.isfinite(f_candidate) and f_candidate <= model + 1e-12 * max(1.0, abs(f_current)):
                break
            tau *= 0.5
        else:
            _LOGGER.warning("Backtracking exhausted at iteration %d (step %.3e)", iteration, tau)

        if not math.isfinite(f_candidate):
            raise SolverDivergenceError(
                "FBS objective became non-finite", iteration=iteration, step=tau, objective=f_candidate
            )

        g_candidate = eval_g(candidate, params, antennas)
        objective = f_candidate + g_candidate
        trace.append(TraceRecord(iteration=iteration, f=f_candidate, g=g_candidate, step=tau))
        iterations = iteration

        step_norm = math.sqrt(_real_inner(
            (candidate.H_est - state.H_est, candidate.XD_est - state.XD_est),
            (candidate.H_est - state.H_est, candidate.XD_est - state.XD_est),
        ))
        state_norm = float(np.linalg.norm(state.stacked))
        relative_change = step_norm / max(state_norm, 1e-12) if step_norm > 0 else 0.0

        new_directions = descent_directions(candidate, inst)
        if params.step_rule == "bb":
            s = (candidate.H_est - state.H_est, candidate.XD_est - state.XD_est)
            # y is the gradient change, i.e. minus the change of the descent directions
            y = (directions[0] - new_directions[0], directions[1] - new_directions[1])
            curvature = _real_inner(s, y)
            if curvature > 0:
                tau = _real_inner(s, s) / curvature

        state, directions, f_current = candidate, new_directions, f_candidate
        _LOGGER.debug("FBS iteration %d: f=%.6g g=%.6g step=%.3e", iteration, f_candidate, g_candidate, tau)
        if relative_change < tol:
            converged = True
            break

    return SolveResult(state=state, iterations=iterations, objective=objective, converged=converged, trace=trace)


def pilot_only_solve(inst: Instance, params: ObjectiveParams, max_iter: int, tol: float) -> SolveResult:
    """Group-sparse channel estimation from the pilot columns alone."""

    view = inst.pilot_view()
    init = SolverState.initial(
        np.zeros((inst.stacked_antennas, inst.num_ues), dtype=complex),
        np.zeros((inst.num_ues, 0), dtype=complex),
    )
    return fbs_solve(view, params, init, max_iter, tol)


def pilot_only_estimate(inst: Instance, params: ObjectiveParams, max_iter: int, tol: float) -> np.ndarray:
    """Return the pilot-only channel estimate shared by every method as a starting point."""

    return pilot_only_solve(inst, params, max_iter, tol).state.H_est


def zf_detect(
    H_hat: np.ndarray,
    active: np.ndarray,
    Y_D: np.ndarray,
    box_half_width: float,
) -> np.ndarray:
    """Zero-forcing equalisation on the active columns, then nearest QPSK symbol."""

    active = np.asarray(active).astype(bool)
    detected = np.zeros((H_hat.shape[1], Y_D.shape[1]), dtype=complex)
    indices = np.flatnonzero(active)
    if indices.size == 0:
        return detected

    channel = H_hat[:, indices]
    if indices.size > channel.shape[0] or np.linalg.matrix_rank(channel) < indices.size:
        _LOGGER.warning(
            "Active channel of %d UEs is rank deficient on %d antennas; using the pseudo-inverse",
            indices.size,
            channel.shape[0],
        )
        equalised = np.linalg.pinv(channel) @ Y_D
    else:
        equalised = np.linalg.lstsq(channel, Y_D, rcond=None)[0]
    detected[indices] = nearest_symbols(equalised, box_half_width)
    return detected


__all__ = [
    "SolveResult",
    "SolverDivergenceError",
    "SolverState",
    "TraceRecord",
    "descent_directions",
    "eval_f",
    "eval_g",
    "fbs_solve",
    "fbs_step",
    "grad_f",
    "in_box",
    "pilot_only_estimate",
    "pilot_only_solve",
    "prox_h",
    "prox_h_blocks",
    "prox_xd",
    "prox_xd_row",
    "zf_detect",
]
