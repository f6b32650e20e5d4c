"""Synthetic grant-free uplink instances for a cell-free network."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import minimize

from dujad.core.config import ConfigurationError
from dujad.schemas import ScenarioConfig

_LOGGER = logging.getLogger(__name__)

BOLTZMANN = 1.380649e-23
PATHLOSS_INTERCEPT_DB = 30.5
PATHLOSS_SLOPE_DB = 36.7
PILOT_REFINE_POWERS = (8.0, 32.0, 128.0)


@dataclass(slots=True)
class Geometry:
    """AP/UE placement and the resulting noise-normalised large-scale gains."""

    ap_positions: np.ndarray
    ue_positions: np.ndarray
    shadow_db: np.ndarray
    power_backoff_db: np.ndarray
    beta: np.ndarray

    def distances(self) -> np.ndarray:
        """Return the N×P matrix of 3-D UE-AP distances in metres."""

        delta = self.ue_positions[:, None, :] - self.ap_positions[None, :, :]
        return np.linalg.norm(delta, axis=-1)


@dataclass(slots=True)
class Instance:
    """One realisation of ``Y = H [X_P, X_D] + N`` with unit noise variance."""

    Y: np.ndarray
    H: np.ndarray
    X_P: np.ndarray
    X_D: np.ndarray
    xi: np.ndarray
    noise: np.ndarray
    qpsk_amplitude: float
    antennas_per_ap: int

    @property
    def num_ues(self) -> int:
        return int(self.X_P.shape[0])

    @property
    def stacked_antennas(self) -> int:
        return int(self.Y.shape[0])

    @property
    def pilot_length(self) -> int:
        return int(self.X_P.shape[1])

    @property
    def data_length(self) -> int:
        return int(self.X_D.shape[1])

    @property
    def Y_P(self) -> np.ndarray:
        return self.Y[:, : self.pilot_length]

    @property
    def Y_D(self) -> np.ndarray:
        return self.Y[:, self.pilot_length :]

    @property
    def X(self) -> np.ndarray:
        return np.hstack([self.X_P, self.X_D])

    @property
    def num_active(self) -> int:
        return int(np.sum(self.xi))

    def pilot_view(self) -> "Instance":
        """Return the pilot-only sub-problem (no data columns)."""

        return Instance(
            Y=self.Y_P,
            H=self.H,
            X_P=self.X_P,
            X_D=np.zeros((self.num_ues, 0), dtype=complex),
            xi=self.xi,
            noise=self.noise[:, : self.pilot_length],
            qpsk_amplitude=self.qpsk_amplitude,
            antennas_per_ap=self.antennas_per_ap,
        )


def noise_power_dbm(cfg: ScenarioConfig) -> float:
    """Thermal noise power plus noise figure over the configured bandwidth."""

    return 10.0 * math.log10(BOLTZMANN * cfg.noise_temp * cfg.bandwidth * 1000.0) + cfg.noise_figure


def pathloss_db(distance_3d: np.ndarray | float) -> np.ndarray | float:
    return PATHLOSS_INTERCEPT_DB + PATHLOSS_SLOPE_DB * np.log10(distance_3d)


def large_scale_gain(
    distance_3d: np.ndarray | float,
    shadow_db: np.ndarray | float,
    cfg: ScenarioConfig,
    power_backoff_db: np.ndarray | float = 0.0,
) -> np.ndarray | float:
    """Return the linear received-SNR gain for the given link(s).

    The gain already contains transmit power and noise power, so the additive
    noise of the instance has unit variance. ``power_backoff_db`` is the
    power-control reduction, clipped to ``cfg.power_control_range``.
    """

    distance = np.asarray(distance_3d, dtype=float)
    if np.any(distance <= 0):
        raise ValueError("large_scale_gain requires strictly positive distances")
    backoff = np.clip(power_backoff_db, 0.0, cfg.power_control_range)
    tx_dbm = 10.0 * math.log10(cfg.tx_power * 1000.0) - backoff
    gain_db = tx_dbm - pathloss_db(distance) - np.asarray(shadow_db, dtype=float) - noise_power_dbm(cfg)
    gain = np.power(10.0, gain_db / 10.0)
    if np.ndim(gain) == 0:
        return float(gain)
    return gain


def generate_geometry(cfg: ScenarioConfig, rng: np.random.Generator) -> Geometry:
    """Drop APs and UEs uniformly in the square and compute their gains.

    Power control equalises the strongest-AP SNR of all UEs to that of the
    weakest UE, limited to the configured control range.
    """

    side = cfg.area_side
    ap_xy = rng.uniform(0.0, side, size=(cfg.num_aps, 2))
    ue_xy = rng.uniform(0.0, side, size=(cfg.num_ues, 2))
    shadow = rng.normal(0.0, cfg.shadow_std, size=(cfg.num_ues, cfg.num_aps))

    ap_positions = np.column_stack([ap_xy, np.full(cfg.num_aps, cfg.ap_height)])
    ue_positions = np.column_stack([ue_xy, np.full(cfg.num_ues, cfg.ue_height)])

    geometry = Geometry(
        ap_positions=ap_positions,
        ue_positions=ue_positions,
        shadow_db=shadow,
        power_backoff_db=np.zeros(cfg.num_ues),
        beta=np.zeros((cfg.num_ues, cfg.num_aps)),
    )
    distances = geometry.distances()
    full_power = np.asarray(large_scale_gain(distances, shadow, cfg))
    strongest_db = 10.0 * np.log10(full_power.max(axis=1))
    backoff = np.clip(strongest_db - strongest_db.min(), 0.0, cfg.power_control_range)
    geometry.power_backoff_db = backoff
    geometry.beta = np.asarray(large_scale_gain(distances, shadow, cfg, backoff[:, None]))
    return geometry


def welch_bound(num_ues: int, pilot_length: int) -> float:
    """Lower bound on the coherence of ``num_ues`` unit vectors in C^pilot_length."""

    if num_ues <= 1 or pilot_length >= num_ues:
        return 0.0
    return math.sqrt((num_ues - pilot_length) / (pilot_length * (num_ues - 1)))


def frame_coherence(pilots: np.ndarray) -> float:
    """Largest normalised cross-correlation between two distinct pilot rows."""

    norms = np.linalg.norm(pilots, axis=1)
    normalised = pilots / np.where(norms > 0, norms, 1.0)[:, None]
    gram = np.abs(normalised @ normalised.conj().T)
    np.fill_diagonal(gram, 0.0)
    return float(gram.max()) if gram.size else 0.0


def _unit_modulus(frame: np.ndarray) -> np.ndarray:
    return np.exp(1j * np.angle(frame)) / math.sqrt(frame.shape[0])


def _polar_factor(matrix: np.ndarray) -> np.ndarray:
    """Unitary factor ``U·Vᴴ`` of the polar decomposition."""

    left, _, right = np.linalg.svd(matrix, full_matrices=False)
    return left @ right


def _nearest_tight_frame(frame: np.ndarray, target: float) -> np.ndarray:
    """Cap the Gram off-diagonals at ``target`` and return the closest tight frame, aligned to ``frame``.

    The capped Gram is projected onto rank-R_P matrices with eigenvalues
    ``N/R_P``; its factor is rotated onto ``frame`` by orthogonal Procrustes
    so that the unit-modulus projection that follows moves it as little as possible.
    """

    pilot_length, num_ues = frame.shape
    gram = frame.conj().T @ frame
    magnitude = np.abs(gram)
    gram = gram * np.minimum(1.0, target / np.maximum(magnitude, 1e-300))
    np.fill_diagonal(gram, 1.0)
    _, vectors = np.linalg.eigh(gram)
    tight = math.sqrt(num_ues / pilot_length) * vectors[:, -pilot_length:].conj().T
    return _polar_factor(frame @ tight.conj().T) @ tight


def _coherence_potential(phases: np.ndarray, shape: Tuple[int, int], power: float) -> Tuple[float, np.ndarray]:
    """``log(Σ_{m≠n} |G_mn|^p)/p`` of the unit-modulus frame ``exp(jθ)/√R_P`` and its phase gradient."""

    frame = np.exp(1j * phases.reshape(shape)) / math.sqrt(shape[0])
    gram = frame.conj().T @ frame
    magnitude = np.abs(gram)
    np.fill_diagonal(magnitude, 0.0)
    peak = float(magnitude.max())
    if peak <= 0.0:
        return 0.0, np.zeros(phases.size)
    # Relative to the peak every term is at most 1 and the sum at least 1.
    ratio = magnitude / peak
    total = float(np.sum(ratio**power))
    weights = ratio ** (power - 2.0) * gram / peak**2
    np.fill_diagonal(weights, 0.0)
    gradient = -2.0 * np.imag(frame * np.conj(frame @ weights)) / total
    return math.log(peak) + math.log(total) / power, gradient.ravel()


def _refine_phases(frame: np.ndarray, iterations: int) -> np.ndarray:
    """Lower the largest cross-correlations by quasi-Newton descent on the entry phases.

    The ``p``-norm of the off-diagonal Gram entries approaches the coherence as
    ``p`` grows; the powers in ``PILOT_REFINE_POWERS`` share the iteration budget.
    """

    shape = frame.shape
    phases = np.angle(frame).ravel()
    per_stage = max(iterations // len(PILOT_REFINE_POWERS), 1)
    for power in PILOT_REFINE_POWERS:
        result = minimize(
            _coherence_potential,
            phases,
            args=(shape, power),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": per_stage},
        )
        if np.all(np.isfinite(result.x)):
            phases = result.x
    return np.exp(1j * phases.reshape(shape)) / math.sqrt(shape[0])


def generate_pilots(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Return the N×R_P pilot matrix, approximately an equiangular tight frame.

    Alternating projections move between Gram matrices whose cross-correlations
    are capped at the Welch bound, tight frames, and unit-modulus entries. The
    best frame found is then refined on its phases. If nothing beats the random
    start, the random unit-modulus rows are used as they are.
    """

    num_ues, pilot_length = cfg.num_ues, cfg.pilot_length
    if pilot_length > num_ues:
        raise ConfigurationError(
            f"pilot_length (R_P={pilot_length}) must not exceed num_ues (N={num_ues})"
        )

    start = _unit_modulus(np.exp(2j * np.pi * rng.random((pilot_length, num_ues))))
    if pilot_length == num_ues:
        # Square case: the DFT basis is an exact unit-modulus orthogonal frame.
        return cfg.pilot_row_norm * np.fft.fft(np.eye(num_ues)) / math.sqrt(num_ues)

    target = welch_bound(num_ues, pilot_length)
    frame = best = start
    start_coherence = best_coherence = frame_coherence(start.T)
    for _ in range(cfg.etf_iterations):
        frame = _unit_modulus(_nearest_tight_frame(frame, target))
        coherence = frame_coherence(frame.T)
        if coherence < best_coherence - 1e-12:
            best, best_coherence = frame, coherence

    if cfg.pilot_refine_iterations:
        refined = _refine_phases(best, cfg.pilot_refine_iterations)
        coherence = frame_coherence(refined.T)
        if coherence < best_coherence - 1e-12:
            best, best_coherence = refined, coherence

    if best is start and (cfg.etf_iterations or cfg.pilot_refine_iterations):
        _LOGGER.warning(
            "ETF projection stalled at coherence %.4f (Welch bound %.4f); using random unit-modulus pilots",
            start_coherence,
            target,
        )
    else:
        _LOGGER.debug("Pilot coherence %.4f against Welch bound %.4f", best_coherence, target)

    return cfg.pilot_row_norm * best.T


def design_pilots(cfg: ScenarioConfig) -> np.ndarray:
    """Pilots seeded by ``cfg.rng_seed`` alone, shared by training and evaluation."""

    return generate_pilots(cfg, np.random.default_rng(cfg.rng_seed))


def generate_instance(
    cfg: ScenarioConfig,
    geo: Geometry,
    rng: np.random.Generator,
    pilots: Optional[np.ndarray] = None,
) -> Instance:
    """Draw activity, fading, QPSK data and noise and assemble ``Y``.

    Every random stream is drawn in full regardless of activity so that a
    seed maps to the same fading and noise for any ``P_a``.
    """

    if pilots is None:
        pilots = generate_pilots(cfg, rng)
    num_ues, num_aps, antennas = cfg.num_ues, cfg.num_aps, cfg.antennas_per_ap
    amplitude = cfg.qpsk_amplitude

    xi = (rng.random(num_ues) < cfg.activity_prob).astype(np.int8)

    fading = (
        rng.standard_normal((num_aps, antennas, num_ues))
        + 1j * rng.standard_normal((num_aps, antennas, num_ues))
    ) / math.sqrt(2.0)
    blocks = fading * np.sqrt(geo.beta.T)[:, None, :]
    H = blocks.reshape(num_aps * antennas, num_ues) * xi[None, :]

    signs = rng.choice(np.array([-1.0, 1.0]), size=(num_ues, cfg.data_length, 2))
    X_D = amplitude * (signs[..., 0] + 1j * signs[..., 1]) * xi[:, None]

    white = (
        rng.standard_normal((num_aps * antennas, cfg.total_length))
        + 1j * rng.standard_normal((num_aps * antennas, cfg.total_length))
    ) / math.sqrt(2.0)
    noise = cfg.noise_scale * white

    X = np.hstack([pilots, X_D])
    Y = H @ X + noise
    return Instance(
        Y=Y,
        H=H,
        X_P=pilots,
        X_D=X_D,
        xi=xi,
        noise=noise,
        qpsk_amplitude=amplitude,
        antennas_per_ap=antennas,
    )


def trial_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent, reproducible sub-stream for one (sweep point, trial) key."""

    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(key) for key in keys)))


def generate_trial(
    cfg: ScenarioConfig,
    pilots: np.ndarray,
    rng: np.random.Generator,
) -> Instance:
    """Draw a fresh geometry and an instance on it."""

    geometry = generate_geometry(cfg, rng)
    return generate_instance(cfg, geometry, rng, pilots=pilots)


__all__ = [
    "BOLTZMANN",
    "Geometry",
    "Instance",
    "design_pilots",
    "frame_coherence",
    "generate_geometry",
    "generate_instance",
    "generate_pilots",
    "generate_trial",
    "large_scale_gain",
    "noise_power_dbm",
    "pathloss_db",
    "trial_rng",
    "welch_bound",
]
