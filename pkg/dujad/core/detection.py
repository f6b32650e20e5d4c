"""Activity decisions and hard symbol detection from a solver state."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np
from scipy.special import expit

from dujad.schemas import AudParams

if TYPE_CHECKING:
    from dujad.core.fbs import SolverState


@dataclass(slots=True)
class DetectionReport:
    """Soft activity output, decisions and detected symbols for one instance."""

    L: np.ndarray
    xi_hat: np.ndarray
    XD_tilde: np.ndarray
    XD_hat: np.ndarray
    uder: Optional[float] = None
    aser: Optional[float] = None
    aser_defined: bool = True

    def as_row(self) -> dict:
        """Scalar summary used by result writers."""

        return {
            "detected_active": int(self.xi_hat.sum()),
            "uder": self.uder,
            "aser": self.aser,
            "aser_defined": self.aser_defined,
        }


def activity_features(state: "SolverState") -> np.ndarray:
    """Return the N×2 matrix of per-UE energies ``(‖h_n‖², ‖x_{D,n}‖²)``."""

    channel_energy = np.sum(np.abs(state.H_est) ** 2, axis=0)
    data_energy = np.sum(np.abs(state.XD_est) ** 2, axis=1)
    return np.column_stack([channel_energy, data_energy])


def likelihood_from_features(features: np.ndarray, aud: AudParams) -> np.ndarray:
    """Logistic activity likelihood of precomputed energy features."""

    argument = aud.omega_h * features[:, 0] + aud.omega_x * features[:, 1] - aud.t_th
    return expit(argument)


def activity_likelihood(state: "SolverState", aud: AudParams) -> np.ndarray:
    """Return ``L_n = sigmoid(ω_h‖h_n‖² + ω_x‖x_{D,n}‖² − T_th)`` for every UE."""

    return likelihood_from_features(activity_features(state), aud)


def decide_activity(L: np.ndarray, l_bar: float) -> np.ndarray:
    """Declare UE n active iff ``L_n > l_bar``."""

    return (np.asarray(L) > l_bar).astype(np.int8)


def energy_activity(H_hat: np.ndarray, threshold: float) -> np.ndarray:
    """Baseline activity rule: active iff the estimated channel energy exceeds ``threshold``."""

    return (np.sum(np.abs(H_hat) ** 2, axis=0) > threshold).astype(np.int8)


def nearest_symbols(XD_est: np.ndarray, box_half_width: float) -> np.ndarray:
    """Map every entry to the nearest QPSK point ``±B ± jB``.

    Entries with a zero real or imaginary part go to the positive point.
    """

    XD_est = np.asarray(XD_est, dtype=complex)
    real = np.where(XD_est.real >= 0, box_half_width, -box_half_width)
    imag = np.where(XD_est.imag >= 0, box_half_width, -box_half_width)
    return real + 1j * imag


def gate_by_activity(XD_tilde: np.ndarray, xi_hat: np.ndarray) -> np.ndarray:
    """Zero the rows of UEs declared inactive."""

    xi_hat = np.asarray(xi_hat)
    if xi_hat.shape[0] != XD_tilde.shape[0]:
        raise ValueError(
            f"Activity vector of length {xi_hat.shape[0]} does not match {XD_tilde.shape[0]} data rows"
        )
    return XD_tilde * xi_hat.astype(float)[:, None]


def detect(state: "SolverState", aud: AudParams, box_half_width: float) -> DetectionReport:
    """Run the soft AUD head and hard data detection on a network output."""

    L = activity_likelihood(state, aud)
    xi_hat = decide_activity(L, aud.l_bar)
    XD_tilde = nearest_symbols(state.XD_est, box_half_width)
    return DetectionReport(L=L, xi_hat=xi_hat, XD_tilde=XD_tilde, XD_hat=gate_by_activity(XD_tilde, xi_hat))


def report_from_decisions(xi_hat: np.ndarray, XD_tilde: np.ndarray) -> DetectionReport:
    """Wrap hard baseline decisions in a report; likelihoods are the decisions themselves."""

    xi_hat = np.asarray(xi_hat).astype(np.int8)
    return DetectionReport(
        L=xi_hat.astype(float),
        xi_hat=xi_hat,
        XD_tilde=XD_tilde,
        XD_hat=gate_by_activity(XD_tilde, xi_hat),
    )


__all__ = [
    "DetectionReport",
    "activity_features",
    "activity_likelihood",
    "decide_activity",
    "detect",
    "energy_activity",
    "gate_by_activity",
    "likelihood_from_features",
    "nearest_symbols",
    "report_from_decisions",
]
