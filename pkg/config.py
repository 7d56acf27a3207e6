"""
config.py - Scenario, learning and sweep configuration models and loading
"""
from __future__ import annotations

import enum
import math
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Optional

from dotenv import load_dotenv
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveFloat,
    PositiveInt,
    field_validator,
    model_validator,
)

load_dotenv()

DEFAULT_CONFIG_PATH = os.getenv("SATPRECODE_CONFIG", "experiment.toml")
DEFAULT_OUT_DIR = os.getenv("SATPRECODE_OUT_DIR", "runs")
DEFAULT_WORKERS = int(os.getenv("SATPRECODE_WORKERS", "1"))


def db_to_linear(value_db: float) -> float:
    """Convert a power ratio in dB (or dBi) to a linear ratio."""
    return 10.0 ** (value_db / 10.0)


class ErrorModel(enum.Enum):
    """CSIT error model enumeration"""
    NONE = "none"
    MODEL1 = "model1"
    MODEL2 = "model2"


class SweepKind(enum.Enum):
    """Evaluation sweep enumeration"""
    DISTANCE = "distance_sweep"
    ERROR1 = "error1_sweep"
    ERROR2 = "error2_sweep"


class _FrozenModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class ScenarioConfig(_FrozenModel):
    """Physical parameters of the downlink scenario"""

    sat_altitude: PositiveFloat = 600e3
    inter_sat_distance: PositiveFloat = 10e3
    num_sats: PositiveInt = 2
    ants_per_sat: PositiveInt = 2
    num_users: PositiveInt = 3
    wavelength: PositiveFloat = 0.15
    inter_ant_distance: PositiveFloat = 0.225
    mean_user_distance: PositiveFloat = 1000.0
    user_jitter_bound: float = Field(default=30.0, ge=0.0)
    gain_sat: PositiveFloat = db_to_linear(14.0)
    gain_usr: PositiveFloat = db_to_linear(0.0)
    total_power: PositiveFloat = 100.0
    noise_power: PositiveFloat = 6e-13

    @model_validator(mode="before")
    @classmethod
    def _convert_gains(cls, data: Any) -> Any:
        # Gains are given in dBi in config files; converted once here
        if not isinstance(data, dict):
            return data
        data = dict(data)
        for key in ("gain_sat", "gain_usr"):
            dbi_key = f"{key}_dbi"
            if dbi_key in data:
                if key in data:
                    raise ValueError(f"give either {key} or {dbi_key}, not both")
                data[key] = db_to_linear(float(data.pop(dbi_key)))
        return data

    @property
    def num_antennas(self) -> int:
        """Total transmit antennas M·N"""
        return self.num_sats * self.ants_per_sat

    @property
    def action_dim(self) -> int:
        """Length of state and action vectors, 2·M·N·K"""
        return 2 * self.num_antennas * self.num_users


class ErrorConfig(_FrozenModel):
    """CSIT error model selection and scales"""

    model: ErrorModel = ErrorModel.NONE
    delta_epsilon: float = Field(default=0.0, ge=0.0)
    sigma_zeta: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_unused_scale(self) -> "ErrorConfig":
        if self.model is ErrorModel.MODEL1 and self.sigma_zeta != 0.0:
            raise ValueError("error model 1 does not use sigma_zeta")
        return self


class TrainingPreset(enum.Enum):
    """Training configurations of the three learned precoders"""
    SAC1 = "SAC1"
    SAC2 = "SAC2"
    SAC3 = "SAC3"

    def error_config(self) -> ErrorConfig:
        if self is TrainingPreset.SAC1:
            return ErrorConfig()
        if self is TrainingPreset.SAC2:
            return ErrorConfig(model=ErrorModel.MODEL1, delta_epsilon=0.1)
        return ErrorConfig(model=ErrorModel.MODEL2, delta_epsilon=0.1, sigma_zeta=0.01)


class SacConfig(_FrozenModel):
    """Soft Actor-Critic learning parameters"""

    batch_size: PositiveInt = 512
    critic_lr: PositiveFloat = 1e-5
    actor_lr: PositiveFloat = 1e-6
    steps: int = Field(default=30_000, ge=0)
    buffer_size: PositiveInt = 10_000
    hidden_layers: PositiveInt = 4
    hidden_nodes: PositiveInt = 512
    # Per action dimension; the initial temperature is exp(initial_log_temperature)
    entropy_target: float = -1.0
    temperature_lr: PositiveFloat = 1e-3
    initial_log_temperature: float = 0.0
    checkpoint_interval: int = Field(default=0, ge=0)
    log_interval: PositiveInt = 1000

    @model_validator(mode="after")
    def _check_buffer_holds_a_batch(self) -> "SacConfig":
        if self.buffer_size < self.batch_size:
            raise ValueError(
                f"buffer_size {self.buffer_size} is smaller than batch_size {self.batch_size}; learning would never start"
            )
        return self


def _linspace(start: float, stop: float, points: int) -> list[float]:
    if points == 1:
        return [start]
    step = (stop - start) / (points - 1)
    return [start + i * step for i in range(points)]


def _check_grid(grid: list[float]) -> list[float]:
    if not grid:
        raise ValueError("sweep grid must not be empty")
    if any(not math.isfinite(v) for v in grid):
        raise ValueError("sweep grid must be finite")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("sweep grid must be strictly increasing")
    return grid


def validate_sweep_grid(kind: SweepKind, grid: list[float]) -> list[float]:
    """
    Check a sweep grid: non-empty, finite, strictly increasing, and within
    the sweep variable's domain.

    Raises:
        ValueError: If the grid is invalid
    """
    _check_grid(grid)
    if kind is SweepKind.DISTANCE and grid[0] <= 0.0:
        raise ValueError("user distances must be positive")
    if kind is not SweepKind.DISTANCE and grid[0] < 0.0:
        raise ValueError("error grids must be non-negative")
    return grid


class SweepConfig(_FrozenModel):
    """Evaluation sweep grids and execution options"""

    distance_start: PositiveFloat = 900.0
    distance_stop: PositiveFloat = 1100.0
    distance_points: PositiveInt = 500
    error1_grid: list[float] = Field(default_factory=lambda: [0.0, 0.025, 0.05, 0.1, 0.2, 0.3])
    error2_grid: list[float] = Field(default_factory=lambda: [0.0, 0.005, 0.01, 0.02, 0.05])
    error2_delta_epsilon: float = Field(default=0.1, ge=0.0)
    stochastic_policy: bool = False
    workers: PositiveInt = DEFAULT_WORKERS

    @field_validator("error1_grid", "error2_grid")
    @classmethod
    def _validate_grid(cls, grid: list[float]) -> list[float]:
        return validate_sweep_grid(SweepKind.ERROR1, grid)

    @model_validator(mode="after")
    def _validate_distance_grid(self) -> "SweepConfig":
        _check_grid(self.distance_grid)
        return self

    @property
    def distance_grid(self) -> list[float]:
        return _linspace(self.distance_start, self.distance_stop, self.distance_points)

    def grid_for(self, kind: SweepKind) -> list[float]:
        if kind is SweepKind.DISTANCE:
            return self.distance_grid
        if kind is SweepKind.ERROR1:
            return list(self.error1_grid)
        return list(self.error2_grid)


class ExperimentSpec(_FrozenModel):
    """Everything needed to train a precoder and run the evaluation sweeps"""

    scenario: ScenarioConfig = Field(default_factory=ScenarioConfig)
    sac: SacConfig = Field(default_factory=SacConfig)
    training_error: ErrorConfig = Field(default_factory=ErrorConfig)
    sweeps: SweepConfig = Field(default_factory=SweepConfig)
    monte_carlo_iterations: PositiveInt = 10_000
    seed: int = 0

    def with_preset(self, preset: TrainingPreset) -> "ExperimentSpec":
        return self.model_copy(update={"training_error": preset.error_config()})

    def with_iterations(self, iterations: Optional[int]) -> "ExperimentSpec":
        if iterations is None:
            return self
        return ExperimentSpec.model_validate({**self.model_dump(), "monte_carlo_iterations": iterations})

    def with_seed(self, seed: Optional[int]) -> "ExperimentSpec":
        if seed is None:
            return self
        return self.model_copy(update={"seed": seed})


def load_experiment_spec(path: Optional[str | Path] = None) -> ExperimentSpec:
    """
    Load an experiment specification from a TOML file.

    Args:
        path: Config file path; defaults to SATPRECODE_CONFIG. A missing default
            file yields the built-in defaults.

    Returns:
        ExperimentSpec: Validated specification

    Raises:
        FileNotFoundError: If an explicitly given file does not exist
        pydantic.ValidationError: If any value is invalid
    """
    if path is None:
        path = Path(DEFAULT_CONFIG_PATH)
        if not path.exists():
            return ExperimentSpec()
    path = Path(path)
    with path.open("rb") as f:
        data = tomllib.load(f)
    return ExperimentSpec.model_validate(data)
