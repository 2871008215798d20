"""Shared types, configuration schema, seeded RNG streams and min-max scaling."""

from __future__ import annotations

import dataclasses
import enum
import zlib
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Any

import numpy as np
import tomli
import tomli_w

SCHEMA_VERSION = 1

SETPOINT_MIN_C = 21.0
SETPOINT_MAX_C = 28.0


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class StateSpaceSet(enum.IntEnum):
    SET_I = 1
    SET_II = 2
    SET_III = 3


class DeploymentMode(str, enum.Enum):
    STOCHASTIC = "stochastic"
    DETERMINISTIC = "deterministic"


@dataclass
class HyperParams:
    gamma: float = 0.99
    alpha: float = 0.05
    lambda_comfort: float = 100.0
    beta: float = 1e-5
    learning_rate: float = 1e-3
    tau: float = 3e-3
    buffer_capacity: int = 2_000_000
    minibatch_size: int = 2048
    update_interval_sim_steps: int = 96
    gradient_steps_per_update: int = 1
    hidden_size: int = 64
    warmup_random_control_steps: int = 168
    init_log_std: float = -2.0
    network_dtype: str = "float32"
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not self.alpha > 0.0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.lambda_comfort < 0.0 or self.beta < 0.0:
            raise ConfigError("reward weights must be non-negative")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0, 1], got {self.tau}")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        for name in ("buffer_capacity", "minibatch_size", "update_interval_sim_steps",
                     "gradient_steps_per_update", "hidden_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.warmup_random_control_steps < 0:
            raise ConfigError("warmup_random_control_steps must be >= 0")
        if self.network_dtype not in ("float32", "float64"):
            raise ConfigError(f"network_dtype must be float32 or float64, got {self.network_dtype!r}")
        if self.minibatch_size > self.buffer_capacity:
            raise ConfigError("minibatch_size exceeds buffer_capacity")


@dataclass
class BuildingParams:
    """Lumped two-node model of the whole office (air node + structural mass node).

    Geometry follows a square 12-storey block of the stated floor area. The
    envelope conductance is U-value times envelope area, split between the
    air node (glazing share) and the mass node (opaque share).
    """

    floor_area_m2: float = 46_320.0
    n_floors: int = 12
    floor_height_m: float = 3.96
    u_value_w_m2k: float = 0.857
    glazing_share: float = 0.4
    infiltration_ach: float = 0.3
    air_capacity_factor: float = 5.0          # furniture and fittings on top of room air
    mass_capacity_j_m2k: float = 165_000.0    # per m2 floor area
    mass_coupling_w_m2k: float = 9.1          # surface conductance per m2 of exposed mass
    mass_area_ratio: float = 2.5              # exposed mass area / floor area
    solar_aperture_m2: float = 900.0          # effective gain area for direct radiation
    solar_to_air: float = 0.3
    gains_to_air: float = 0.6
    plug_light_w_m2: float = 21.5             # peak electric load that ends up as heat
    people_w_m2: float = 4.0
    standby_fraction: float = 0.25            # base electric load with the building empty
    cop: float = 3.5
    capacity_kw: float = 0.0                  # 0 -> sized from the trace design day
    autosize_factor: float = 1.2
    tes_volume_m3: float = 100.0
    tes_delta_t_k: float = 6.0
    tes_supply_temp_c: float = 6.0
    tes_charge_kw: float = 150.0              # thermal
    tes_discharge_kw: float = 150.0           # thermal
    tes_initial_soc: float = 0.5
    initial_t_zone_c: float = 26.5
    initial_t_mass_c: float = 26.5

    def validate(self) -> None:
        positive = ("floor_area_m2", "floor_height_m", "u_value_w_m2k", "air_capacity_factor",
                    "mass_capacity_j_m2k", "mass_coupling_w_m2k", "mass_area_ratio", "cop",
                    "autosize_factor", "tes_delta_t_k")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.n_floors < 1:
            raise ConfigError("n_floors must be >= 1")
        for name in ("glazing_share", "solar_to_air", "gains_to_air", "standby_fraction",
                     "tes_initial_soc"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        for name in ("infiltration_ach", "solar_aperture_m2", "plug_light_w_m2", "people_w_m2",
                     "capacity_kw", "tes_volume_m3", "tes_charge_kw", "tes_discharge_kw"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")


@dataclass
class ScheduleParams:
    """Opening hours, comfort band and the rule-based reference schedule."""

    weekday_open_h: int = 6
    weekday_close_h: int = 24
    saturday_open_h: int = 6
    saturday_close_h: int = 17
    occupied_t_min: float = 21.0
    occupied_t_max: float = 26.0
    unoccupied_t_min: float = 15.0
    unoccupied_t_max: float = 32.0
    rbc_occupied_setpoint: float = 24.0
    rbc_setback_setpoint: float = 28.0

    def validate(self) -> None:
        if not self.occupied_t_max > self.occupied_t_min:
            raise ConfigError("occupied comfort band is empty")
        if not self.unoccupied_t_max > self.unoccupied_t_min:
            raise ConfigError("unoccupied comfort band is empty")
        for sp in (self.rbc_occupied_setpoint, self.rbc_setback_setpoint):
            if not SETPOINT_MIN_C <= sp <= SETPOINT_MAX_C:
                raise ConfigError(f"RBC setpoint {sp} outside [21, 28]")
        for lo, hi in ((self.weekday_open_h, self.weekday_close_h),
                       (self.saturday_open_h, self.saturday_close_h)):
            if not 0 <= lo <= hi <= 24:
                raise ConfigError("opening hours must satisfy 0 <= open <= close <= 24")


@dataclass
class SyntheticTraceParams:
    start: str = "2017-03-31"
    end: str = "2017-10-01"                   # exclusive
    climate_zone: int = 3
    seed: int = 7
    price_night: float = 0.035                # 00:00-06:00
    price_day: float = 0.055
    price_peak: float = 0.085                 # evening peak
    peak_start_h: int = 17
    peak_end_h: int = 21
    price_noise: float = 0.04                 # relative day-to-day variation
    night_trough_depth: float = 0.15          # relative dip of the night tier
    night_trough_h: float = 4.0               # hour of the lowest night price

    def validate(self) -> None:
        if date.fromisoformat(self.end) <= date.fromisoformat(self.start):
            raise ConfigError("synthetic trace end must follow start")
        if min(self.price_night, self.price_day, self.price_peak) <= 0:
            raise ConfigError("prices must be positive")
        if not 0.0 <= self.price_noise < 0.5:
            raise ConfigError("price_noise must lie in [0, 0.5)")
        if not 0.0 <= self.night_trough_depth < 1.0:
            raise ConfigError("night_trough_depth must lie in [0, 1)")


@dataclass
class RunConfig:
    hyperparams: HyperParams = field(default_factory=HyperParams)
    building: BuildingParams = field(default_factory=BuildingParams)
    schedule: ScheduleParams = field(default_factory=ScheduleParams)
    synthetic: SyntheticTraceParams = field(default_factory=SyntheticTraceParams)
    state_space_set: int = 2
    episodes: int = 50
    episode_start: str = "2017-04-01T00:00"
    episode_end: str = "2017-07-01T00:00"     # exclusive
    sim_step_minutes: int = 15
    control_step_minutes: int = 60
    trace_path: str = ""                      # empty -> synthetic generator
    eval_start: str = ""                      # empty -> first full work week of July
    eval_days: int = 5
    deployment_mode: str = "deterministic"
    normalization: dict[str, list[float]] = field(default_factory=dict)

    @property
    def hold(self) -> int:
        return self.control_step_minutes // self.sim_step_minutes

    def validate(self) -> None:
        self.hyperparams.validate()
        self.building.validate()
        self.schedule.validate()
        self.synthetic.validate()
        if self.state_space_set not in (1, 2, 3):
            raise ConfigError(f"state_space_set must be 1, 2 or 3, got {self.state_space_set}")
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if self.sim_step_minutes < 1 or 60 % self.sim_step_minutes:
            raise ConfigError("sim_step_minutes must divide an hour")
        if self.control_step_minutes < self.sim_step_minutes or \
                self.control_step_minutes % self.sim_step_minutes:
            raise ConfigError("control step must be an integer multiple of the sim step")
        if self.eval_days < 1:
            raise ConfigError("eval_days must be >= 1")
        try:
            DeploymentMode(self.deployment_mode)
        except ValueError:
            raise ConfigError(f"unknown deployment_mode {self.deployment_mode!r}") from None
        for key, bounds in self.normalization.items():
            if len(bounds) != 2:
                raise ConfigError(f"normalization[{key}] needs [min, max]")
            NormalizationSpec(*bounds)


# ----------------------------------------------------------------------------- scaling

@dataclass(frozen=True)
class NormalizationSpec:
    min: float
    max: float

    def __post_init__(self) -> None:
        if not self.max > self.min:
            raise ConfigError(f"normalization max ({self.max}) must exceed min ({self.min})")


def normalize(value, spec: NormalizationSpec):
    """Min-max scale into [0, 1], clamping values outside the declared range."""
    if isinstance(value, (float, int)):
        # scalar fast path, called several times per simulated step
        return min(max((float(value) - spec.min) / (spec.max - spec.min), 0.0), 1.0)
    scaled =(np.asarray(value, dtype=float) - spec.min) / (spec.max - spec.min)
    out = np.clip(scaled, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def denormalize_action(a) -> float:
    """Map a normalized action onto the cooling setpoint range 21-28 C."""
    a = min(max(float(a), 0.0), 1.0)
    return SETPOINT_MIN_C + (SETPOINT_MAX_C - SETPOINT_MIN_C) * a


def normalize_setpoint(setpoint: float) -> float:
    return (float(setpoint) - SETPOINT_MIN_C) / (SETPOINT_MAX_C - SETPOINT_MIN_C)


# ----------------------------------------------------------------------------- RNG

def seeded_rng(seed: int, stream: str | None = None) -> np.random.Generator:
    """Deterministic generator; named streams are independent of each other."""
    entropy = [int(seed)]
    if stream is not None:
        entropy.append(zlib.crc32(stream.encode("utf-8")))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


# ----------------------------------------------------------------------------- config file

_SECTIONS = {
    "sac": ("hyperparams", HyperParams),
    "building": ("building", BuildingParams),
    "schedule": ("schedule", ScheduleParams),
    "synthetic": ("synthetic", SyntheticTraceParams),
}
_RUN_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {
    "hyperparams", "building", "schedule", "synthetic", "normalization"}


def _coerce(cls, section: str, values: dict[str, Any]):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    out = {}
    for key, value in values.items():
        default = getattr(cls(), key)
        if isinstance(default, bool) or not isinstance(default, (int, float, str)):
            out[key] = value
        elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
            out[key] = float(value)
        elif type(value) is not type(default):
            raise ConfigError(f"[{section}] {key}: expected {type(default).__name__}, "
                              f"got {type(value).__name__}")
        else:
            out[key] = value
    return cls(**out)


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    data = dict(data)
    version = data.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    kwargs: dict[str, Any] = {}
    run = data.pop("run", {})
    unknown = sorted(set(run) - _RUN_KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s) in [run]: {', '.join(unknown)}")
    base = RunConfig()
    for key, value in run.items():
        default = getattr(base, key)
        if isinstance(default, float) and isinstance(value, int):
            value = float(value)
        if type(value) is not type(default):
            raise ConfigError(f"[run] {key}: expected {type(default).__name__}")
        kwargs[key] = value
    for section, (attr, cls) in _SECTIONS.items():
        if section in data:
            kwargs[attr] = _coerce(cls, section, data.pop(section))
    if "normalization" in data:
        norm = data.pop("normalization")
        kwargs["normalization"] = {k: [float(x) for x in v] for k, v in norm.items()}
    if data:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(data))}")
    cfg = RunConfig(**kwargs)
    cfg.validate()
    return cfg


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    out: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
    out["run"] = {k: getattr(cfg, k) for k in sorted(_RUN_KEYS)}
    for section, (attr, _) in _SECTIONS.items():
        out[section] = dataclasses.asdict(getattr(cfg, attr))
    if cfg.normalization:
        out["normalization"] = {k: list(v) for k, v in cfg.normalization.items()}
    return out


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "wb") as fh:
        tomli_w.dump(config_to_dict(cfg), fh)


def apply_overrides(cfg: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Apply dotted-key overrides such as ``{"sac.gamma": 0.9, "run.episodes": 3}``."""
    data = config_to_dict(cfg)
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if not key:
            section, key = "run", section
        if section == "normalization":
            data.setdefault(section, {})
        if section not in data:
            raise ConfigError(f"unknown section in override {dotted!r}")
        data[section][key] = value
    return config_from_dict(data)
