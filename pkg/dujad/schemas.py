"""Data schemas for the DU-JAD simulator."""

from __future__ import annotations

import math
import re
from pathlib import Path
from typing import Any, ClassVar, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import (
    AliasChoices,
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    field_validator,
    model_validator,
)


METHOD_NAMES: Tuple[str, ...] = ("baseline1", "baseline4_200it", "baseline4_10it", "dujad")
MethodName = Literal["baseline1", "baseline4_200it", "baseline4_10it", "dujad"]
StepNormalisation = Literal["none", "spectral"]


def _split_list(value: object) -> object:
    """Turn ``"a, b,c"`` style key-value strings into lists."""

    if isinstance(value, str):
        return [part.strip() for part in re.split(r"[,\s]+", value) if part.strip()]
    if isinstance(value, tuple):
        return list(value)
    return value


def _blank_to_none(value: object) -> object:
    if isinstance(value, str) and not value.strip():
        return None
    return value


class ScenarioConfig(BaseModel):
    """Dimensional and physical constants of one cell-free uplink scenario."""

    num_ues: PositiveInt = Field(default=50, validation_alias=AliasChoices("num_ues", "N", "n"))
    num_aps: PositiveInt = Field(default=8, validation_alias=AliasChoices("num_aps", "P", "p"))
    antennas_per_ap: PositiveInt = Field(
        default=2, validation_alias=AliasChoices("antennas_per_ap", "M", "m")
    )
    pilot_length: PositiveInt = Field(
        default=16, validation_alias=AliasChoices("pilot_length", "R_P", "r_p")
    )
    data_length: PositiveInt = Field(
        default=32, validation_alias=AliasChoices("data_length", "R_D", "r_d")
    )
    activity_prob: float = Field(
        default=0.2, ge=0.0, le=1.0, validation_alias=AliasChoices("activity_prob", "P_a", "p_a")
    )
    qpsk_amplitude: PositiveFloat = Field(
        default=math.sqrt(0.5), validation_alias=AliasChoices("qpsk_amplitude", "B", "b")
    )
    area_side: PositiveFloat = 500.0
    ue_height: NonNegativeFloat = 1.65
    ap_height: NonNegativeFloat = 15.0
    tx_power: PositiveFloat = 0.1
    power_control_range: NonNegativeFloat = 12.0
    shadow_std: NonNegativeFloat = 8.0
    noise_figure: float = 9.0
    bandwidth: PositiveFloat = 20e6
    carrier: PositiveFloat = 1.9e9
    noise_temp: PositiveFloat = 290.0
    pilot_amplitude: Optional[PositiveFloat] = None
    noise_scale: NonNegativeFloat = 1.0
    etf_iterations: NonNegativeInt = 500
    pilot_refine_iterations: NonNegativeInt = 600
    rng_seed: int = 0

    model_config = ConfigDict(populate_by_name=True, frozen=True, extra="forbid")

    @field_validator("pilot_amplitude", mode="before")
    @classmethod
    def _coerce_blank(cls, value: object) -> object:
        return _blank_to_none(value)

    @model_validator(mode="after")
    def _check_geometry(self) -> "ScenarioConfig":
        if self.ue_height == self.ap_height:
            raise ValueError("ue_height and ap_height must differ so every 3-D distance is positive")
        return self

    @property
    def total_length(self) -> int:
        """Total resources R = R_P + R_D."""

        return self.pilot_length + self.data_length

    @property
    def stacked_antennas(self) -> int:
        """Rows of Y and H (M·P)."""

        return self.antennas_per_ap * self.num_aps

    @property
    def pilot_row_norm(self) -> float:
        """Euclidean norm of every pilot row; one unit of energy per pilot symbol by default."""

        if self.pilot_amplitude is not None:
            return float(self.pilot_amplitude)
        return math.sqrt(self.pilot_length)


class ObjectiveParams(BaseModel):
    """Weights of the JAD objective plus the baseline solver protocol."""

    mu_h: NonNegativeFloat
    mu_x: NonNegativeFloat = 1.0
    box_half_width: PositiveFloat = math.sqrt(0.5)
    tau: Optional[PositiveFloat] = None
    step_rule: Literal["bb", "fixed"] = "bb"
    backtracking: bool = True
    max_iter: PositiveInt = 200
    tol: PositiveFloat = 1e-3
    pilot_max_iter: PositiveInt = 200
    energy_threshold: NonNegativeFloat = 0.1

    model_config = ConfigDict(extra="forbid")

    @field_validator("tau", mode="before")
    @classmethod
    def _coerce_blank(cls, value: object) -> object:
        return _blank_to_none(value)

    @classmethod
    def for_scenario(cls, scenario: ScenarioConfig, **overrides: Any) -> "ObjectiveParams":
        """Return parameters with the hand-tuned defaults for ``scenario``.

        The group threshold sits at 1.5 times the typical pilot-correlation
        noise norm of one AP block.
        """

        payload: dict[str, Any] = {
            "mu_h": 1.5 * math.sqrt(scenario.antennas_per_ap) * scenario.pilot_row_norm,
            "box_half_width": scenario.qpsk_amplitude,
        }
        payload.update({key: value for key, value in overrides.items() if value is not None})
        return cls.model_validate(payload)


class LayerParams(BaseModel):
    """Trainable scalars of one unfolded FBS module."""

    FIELD_ORDER: ClassVar[Tuple[str, ...]] = (
        "tau_h",
        "tau_x",
        "eta_h",
        "eta_x",
        "mu_h",
        "lam",
        "nu",
        "log_ne",
    )

    tau_h: float
    tau_x: float
    eta_h: float = 0.0
    eta_x: float = 0.0
    mu_h: float = 0.0
    lam: float = Field(default=1.0, validation_alias=AliasChoices("lam", "lambda"))
    nu: float = 0.0
    log_ne: float = 0.0

    model_config = ConfigDict(populate_by_name=True)

    @property
    def ne(self) -> float:
        """Estimation-error variance N_e, positive by construction."""

        return math.exp(self.log_ne)

    @property
    def shrink_weight(self) -> float:
        return max(self.mu_h, 0.0)

    def as_tuple(self) -> Tuple[float, ...]:
        return tuple(float(getattr(self, name)) for name in self.FIELD_ORDER)


class UnfoldedParams(BaseModel):
    """Parameters of the K-layer unfolded network.

    With ``step_normalisation="spectral"`` the learned ``τ_h`` and ``τ_x`` are
    multiples of ``1/‖[X_P, X_D]‖₂²`` and ``1/‖H‖₂²`` of each layer's input
    iterate instead of absolute step sizes.
    """

    layers: List[LayerParams] = Field(min_length=1)
    activity_prob: float = Field(default=0.2, ge=0.0, le=1.0)
    step_normalisation: StepNormalisation = "none"

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def num_trainable(self) -> int:
        return self.num_layers * len(LayerParams.FIELD_ORDER)

    def to_vector(self) -> np.ndarray:
        """Flatten the per-layer scalars layer-major."""

        return np.array([value for layer in self.layers for value in layer.as_tuple()], dtype=float)

    @classmethod
    def from_vector(
        cls,
        vector: Sequence[float],
        *,
        activity_prob: float,
        step_normalisation: StepNormalisation = "none",
    ) -> "UnfoldedParams":
        width = len(LayerParams.FIELD_ORDER)
        values = [float(value) for value in vector]
        if not values or len(values) % width:
            raise ValueError(f"Parameter vector length {len(values)} is not a multiple of {width}")
        layers = [
            LayerParams(**dict(zip(LayerParams.FIELD_ORDER, values[start : start + width])))
            for start in range(0, len(values), width)
        ]
        return cls(layers=layers, activity_prob=activity_prob, step_normalisation=step_normalisation)


class AudParams(BaseModel):
    """Soft-output activity head and its decision threshold."""

    omega_h: float = 0.0
    omega_x: float = 0.0
    t_th: float = 0.0
    l_bar: float = Field(default=0.5, ge=0.0, le=1.0)

    def head_vector(self) -> np.ndarray:
        return np.array([self.omega_h, self.omega_x, self.t_th], dtype=float)

    def with_head(self, vector: Sequence[float]) -> "AudParams":
        omega_h, omega_x, t_th = (float(value) for value in vector)
        return self.model_copy(update={"omega_h": omega_h, "omega_x": omega_x, "t_th": t_th})


class TrainConfig(BaseModel):
    """Knobs of the two training stages."""

    n_train: PositiveInt = 200
    n_val: PositiveInt = 50
    batch_size: PositiveInt = 20
    epochs: NonNegativeInt = 20
    step_rule: Literal["fixed", "decaying"] = "decaying"
    base_lr: PositiveFloat = 0.05
    spsa_perturb: PositiveFloat = 0.05
    gradient: Literal["spsa", "fd"] = "spsa"
    accept_only_improving: bool = True
    max_rejections: PositiveInt = 8
    seed: int = 0
    param_init: Literal["baseline", "momentum"] = "baseline"
    step_normalisation: StepNormalisation = "spectral"
    num_layers: PositiveInt = 10
    aud_steps: NonNegativeInt = 200

    model_config = ConfigDict(extra="forbid")


class ExperimentConfig(BaseModel):
    """Monte-Carlo sweep definition."""

    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    objective: Optional[ObjectiveParams] = None
    training: TrainConfig = Field(default_factory=TrainConfig)
    methods: List[MethodName] = Field(default_factory=lambda: list(METHOD_NAMES), min_length=1)
    trials: PositiveInt = 500
    p_sweep: List[PositiveInt] = Field(default_factory=lambda: [4, 8, 12], min_length=1)
    checkpoint: Optional[Path] = None
    output: Optional[Path] = None
    seed: int = 0
    record_timing: bool = False
    trace_dir: Optional[Path] = None

    @field_validator("methods", "p_sweep", mode="before")
    @classmethod
    def _coerce_lists(cls, value: object) -> object:
        return _split_list(value)

    @field_validator("checkpoint", "output", "trace_dir", mode="before")
    @classmethod
    def _coerce_paths(cls, value: object) -> object:
        return _blank_to_none(value)

    @model_validator(mode="after")
    def _fill_objective(self) -> "ExperimentConfig":
        if self.objective is None:
            self.objective = ObjectiveParams.for_scenario(self.scenario)
        return self

    def scenario_for(self, num_aps: int) -> ScenarioConfig:
        """Return the scenario with the AP count of one sweep point."""

        return self.scenario.model_copy(update={"num_aps": int(num_aps)})


RESULT_COLUMNS: Tuple[str, ...] = ("method", "P", "trial", "uder", "aser", "iterations", "wall_time")


class ResultRow(BaseModel):
    """One (method, AP count, trial) outcome."""

    method: MethodName
    P: PositiveInt
    trial: NonNegativeInt
    uder: float = Field(ge=0.0, le=1.0)
    aser: float = Field(ge=0.0, le=1.0)
    iterations: NonNegativeInt
    wall_time: NonNegativeFloat = 0.0


class Checkpoint(BaseModel):
    """Trained DU-JAD parameters for one AP count."""

    num_aps: PositiveInt
    scenario: ScenarioConfig
    network: UnfoldedParams
    aud: AudParams
    validation_loss_fbs: Optional[float] = None
    validation_loss_aud: Optional[float] = None


__all__ = [
    "METHOD_NAMES",
    "RESULT_COLUMNS",
    "AudParams",
    "Checkpoint",
    "ExperimentConfig",
    "LayerParams",
    "MethodName",
    "ObjectiveParams",
    "ResultRow",
    "ScenarioConfig",
    "TrainConfig",
    "UnfoldedParams",
]
