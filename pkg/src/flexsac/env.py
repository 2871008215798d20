"""Building environment: two-node RC thermal model with a cooling plant and TES tank.

State ``x = [t_zone, t_mass]`` obeys

    C_a dTa/dt = UA_a (To - Ta) + H (Tm - Ta) + Qa - Qc
    C_m dTm/dt = UA_m (To - Tm) + H (Ta - Tm) + Qm

with inputs held constant over a sim step (trace values at the step start),
so each step uses the exact zero-order-hold discretization. The cooling
power ``Qc`` is the smallest non-negative constant that brings the air node
to the setpoint by the end of the step, capped at plant capacity.

Step results report the zone temperature at the end of the step and judge
it against the comfort band in force at that instant; energy is priced at
the step start (left-point rule).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np
from scipy.linalg import expm

from .core import (SETPOINT_MAX_C, SETPOINT_MIN_C, BuildingParams, NormalizationSpec, RunConfig,
                   ScheduleParams, StateSpaceSet, normalize)
from .nn import StateError
from .traces import ComfortSchedule, TraceError, TraceSet, is_open

RHO_CP_AIR = 1.2 * 1005.0     # J/(m3 K)
RHO_CP_WATER = 1000.0 * 4186.0
LAG_STEPS = 4
LOOKAHEAD_HOURS = 4
WARMUP_HOURS = 1

# Declared operating ranges used for min-max scaling; wide enough for the
# nine stand-in climates. Override per key in the [normalization] section.
DEFAULT_NORMALIZATION = {
    "price": (0.0, 0.2),
    "hvac_kw": (0.0, 2500.0),
    "total_kw": (0.0, 4500.0),
    "t_zone": (10.0, 40.0),
    "day_of_week": (1.0, 7.0),
    "hour_of_day": (1.0, 24.0),
    "tdb": (-30.0, 50.0),
    "twb": (-30.0, 35.0),
    "wind": (0.0, 25.0),
    "wind_dir": (0.0, 360.0),
    "rh": (0.0, 100.0),
    "solar": (0.0, 1100.0),
    "tes_temp": (4.0, 14.0),
    "occupancy": (0.0, 1.0),
}

_SET_I = ["price", "hvac_kw", "total_kw", "t_zone", "day_of_week", "hour_of_day",
          "tdb", "twb", "wind", "wind_dir", "rh", "solar"]
_SET_II_EXTRA = ([f"price_+{h}h" for h in range(1, LOOKAHEAD_HOURS + 1)]
                 + ["tes_temp", "occupancy"]
                 + [f"hvac_kw_lag{k}" for k in range(1, LAG_STEPS)]
                 + [f"t_zone_lag{k}" for k in range(1, LAG_STEPS)])
_SET_III_EXTRA = [f"{v}_+{h}h" for v in ("tdb", "twb", "rh", "solar")
                  for h in range(1, LOOKAHEAD_HOURS + 1)]

FEATURES = {
    StateSpaceSet.SET_I: _SET_I,
    StateSpaceSet.SET_II: _SET_I + _SET_II_EXTRA,
    StateSpaceSet.SET_III: _SET_I + _SET_II_EXTRA + _SET_III_EXTRA,
}


def observation_size(state_set: int) -> int:
    return len(FEATURES[StateSpaceSet(state_set)])


# ----------------------------------------------------------------------------- thermal model

@dataclass(frozen=True)
class ThermalCoefficients:
    ua_air: float     # W/K, air node to outdoors (glazing + infiltration)
    ua_mass: float    # W/K, mass node to outdoors (opaque envelope)
    h_am: float       # W/K, air <-> mass
    c_air: float      # J/K
    c_mass: float     # J/K

    @classmethod
    def from_params(cls, p: BuildingParams) -> "ThermalCoefficients":
        footprint = p.floor_area_m2 / p.n_floors
        side = math.sqrt(footprint)
        height = p.n_floors * p.floor_height_m
        envelope_area = 4.0 * side * height + footprint
        ua_env = p.u_value_w_m2k * envelope_area
        volume = p.floor_area_m2 * p.floor_height_m
        infiltration = p.infiltration_ach * volume / 3600.0 * RHO_CP_AIR
        return cls(
            ua_air=p.glazing_share * ua_env + infiltration,
            ua_mass=(1.0 - p.glazing_share) * ua_env,
            h_am=p.mass_coupling_w_m2k * p.mass_area_ratio * p.floor_area_m2,
            c_air=volume * RHO_CP_AIR * p.air_capacity_factor,
            c_mass=p.mass_capacity_j_m2k * p.floor_area_m2,
        )

    def system(self) -> tuple[np.ndarray, np.ndarray]:
        """Continuous-time ``A`` (2x2) and ``B`` (2x4) for inputs [To, Qa, Qm, Qc]."""
        a = np.array([
            [-(self.ua_air + self.h_am) / self.c_air, self.h_am / self.c_air],
            [self.h_am / self.c_mass, -(self.ua_mass + self.h_am) / self.c_mass],
        ])
        b = np.array([
            [self.ua_air / self.c_air, 1.0 / self.c_air, 0.0, -1.0 / self.c_air],
            [self.ua_mass / self.c_mass, 0.0, 1.0 / self.c_mass, 0.0],
        ])
        return a, b

    def discretize(self, dt_s: float) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.system()
        m = np.zeros((6, 6))
        m[:2, :2] = a * dt_s
        m[:2, 2:] = b * dt_s
        e = expm(m)
        return e[:2, :2], e[:2, 2:]


def design_cooling_kw(p: BuildingParams, coeffs: ThermalCoefficients, traces: TraceSet,
                      indoor_c: float = 24.0) -> float:
    """Steady design-day load: envelope at peak drybulb plus peak solar and full gains."""
    envelope = (coeffs.ua_air + coeffs.ua_mass) * max(0.0, float(traces.tdb_c.max()) - indoor_c)
    solar = float(traces.solar_wm2.max()) * p.solar_aperture_m2
    internal = p.floor_area_m2 * (p.plug_light_w_m2 + p.people_w_m2)
    return (envelope + solar + internal) / 1000.0


# ----------------------------------------------------------------------------- state & results

@dataclass
class BuildingState:
    t_zone: float
    t_mass: float
    tes_soc: float
    sim_clock: datetime
    hvac_lag: deque = field(default_factory=lambda: deque(maxlen=LAG_STEPS))
    t_zone_lag: deque = field(default_factory=lambda: deque(maxlen=LAG_STEPS))


@dataclass
class StepResult:
    timestamp: datetime       # start of the sim step
    setpoint: float
    t_zone: float             # end of step
    t_mass: float
    t_min: float              # comfort band at the end of the step
    t_max: float
    e_hvac: float             # kWh electric (primary chiller + TES charging)
    e_total: float            # kWh electric, HVAC plus base load
    price: float              # per kWh, at the step start
    tes_soc: float
    cooling_kw: float         # thermal power delivered to the zone
    observation: np.ndarray
    done: bool


def rbc_setpoint(ts: datetime, schedule: ScheduleParams) -> float:
    """Reference rule-based control: fixed occupied setpoint, setback otherwise."""
    if is_open(ts, schedule):
        return schedule.rbc_occupied_setpoint
    return schedule.rbc_setback_setpoint


class BuildingEnv:
    """Episode-based environment driven by a :class:`TraceSet`."""

    def __init__(self, config: RunConfig, traces: TraceSet):
        self.config = config
        self.traces = traces
        self.params = config.building
        self.schedule = config.schedule
        self.comfort = ComfortSchedule(config.schedule)
        self.state_set = StateSpaceSet(config.state_space_set)
        self.step_td = timedelta(minutes=config.sim_step_minutes)
        if traces.step != self.step_td:
            raise TraceError(f"trace cadence {traces.step} differs from sim step {self.step_td}")
        self.dt_h = config.sim_step_minutes / 60.0
        self.hold = config.hold
        self.steps_per_hour = 60 // config.sim_step_minutes

        p = self.params
        self.coeffs = ThermalCoefficients.from_params(p)
        self.ad, self.bd = self.coeffs.discretize(self.dt_h * 3600.0)
        if p.capacity_kw > 0:
            self.capacity_kw = p.capacity_kw
        else:
            self.capacity_kw = p.autosize_factor * design_cooling_kw(p, self.coeffs, traces)
        self.tes_capacity_kwh = p.tes_volume_m3 * RHO_CP_WATER * p.tes_delta_t_k / 3.6e6
        self._prepare_traces()
        self.state: BuildingState | None = None
        self._end_index = 0
        self._done = True

    # -- precomputation ---------------------------------------------------------------------

    def _spec(self, key: str) -> NormalizationSpec:
        lo, hi = self.config.normalization.get(key, DEFAULT_NORMALIZATION[key])
        return NormalizationSpec(lo, hi)

    def _prepare_traces(self) -> None:
        tr = self.traces
        n = len(tr)
        times = [tr.timestamp(i) for i in range(n)]
        self._open = np.array([is_open(t, self.schedule) for t in times])
        bounds = np.array([self.comfort.bounds(t) for t in times])
        self._t_min, self._t_max = bounds[:, 0], bounds[:, 1]
        dow = np.array([t.isoweekday() for t in times], dtype=float)
        hod = np.array([t.hour + 1 for t in times], dtype=float)
        self._norm = {
            "price": normalize(tr.price_per_kwh, self._spec("price")),
            "day_of_week": normalize(dow, self._spec("day_of_week")),
            "hour_of_day": normalize(hod, self._spec("hour_of_day")),
            "tdb": normalize(tr.tdb_c, self._spec("tdb")),
            "twb": normalize(tr.twb_c, self._spec("twb")),
            "wind": normalize(tr.wind_mps, self._spec("wind")),
            "wind_dir": normalize(tr.wind_deg, self._spec("wind_dir")),
            "rh": normalize(tr.rh_pct, self._spec("rh")),
            "solar": normalize(tr.solar_wm2, self._spec("solar")),
            "occupancy": normalize(tr.occupancy, self._spec("occupancy")),
        }
        p = self.params
        base_w = p.floor_area_m2 * p.plug_light_w_m2 * (
            p.standby_fraction + (1.0 - p.standby_fraction) * tr.occupancy)
        internal = base_w + p.floor_area_m2 * p.people_w_m2 * tr.occupancy
        solar = tr.solar_wm2 * p.solar_aperture_m2
        self._base_kw = (base_w / 1000.0).tolist()
        self._q_air = (p.gains_to_air * internal + p.solar_to_air * solar).tolist()
        self._q_mass = ((1.0 - p.gains_to_air) * internal + (1.0 - p.solar_to_air) * solar).tolist()
        self._tdb = tr.tdb_c.tolist()
        self._price = tr.price_per_kwh.tolist()
        self._specs = {k: self._spec(k) for k in ("hvac_kw", "total_kw", "t_zone", "tes_temp")}

    # -- episode control ----------------------------------------------------------------------

    def reset(self, start: datetime | str | None = None,
              end: datetime | str | None = None) -> np.ndarray:
        """Start an episode on [start, end); defaults to the configured training span."""
        start = _as_datetime(start or self.config.episode_start)
        end = _as_datetime(end or self.config.episode_end)
        if end <= start:
            raise TraceError("episode end must follow its start")
        span_steps = (end - start) // self.step_td
        if (end - start) % self.step_td or span_steps % self.hold:
            raise TraceError("episode span must be a whole number of control steps")
        warmup_start = start - timedelta(hours=WARMUP_HOURS)
        self.traces.require(warmup_start, end + timedelta(hours=LOOKAHEAD_HOURS))
        p = self.params
        self.state = BuildingState(p.initial_t_zone_c, p.initial_t_mass_c, p.tes_initial_soc,
                                   warmup_start)
        self._end_index = self.traces.index_of(end)
        self._done = False
        for _ in range(WARMUP_HOURS * self.steps_per_hour):
            self._advance(rbc_setpoint(self.state.sim_clock, self.schedule))
        return self.build_observation()

    @property
    def done(self) -> bool:
        return self._done

    @property
    def clock(self) -> datetime:
        return self.state.sim_clock

    def step(self, setpoint: float, hold: int | None = None) -> list[StepResult]:
        """Hold ``setpoint`` for ``hold`` sim steps (default: one control step)."""
        if self.state is None or self._done:
            raise StateError("step() called on a finished episode; call reset()")
        if not SETPOINT_MIN_C <= setpoint <= SETPOINT_MAX_C:
            raise ValueError(f"setpoint {setpoint} outside [{SETPOINT_MIN_C}, {SETPOINT_MAX_C}]")
        hold = self.hold if hold is None else int(hold)
        if hold < 1:
            raise ValueError("hold must be >= 1")
        results = []
        for _ in range(hold):
            if self._done:
                raise StateError("hold runs past the end of the episode")
            results.append(self._advance(setpoint, record=True))
        return results

    # -- physics ------------------------------------------------------------------------------

    def _advance(self, setpoint: float, record: bool = False) -> StepResult | None:
        s = self.state
        k = self.traces.index_of(s.sim_clock)
        ad, bd = self.ad, self.bd
        to, qa, qm = self._tdb[k], self._q_air[k], self._q_mass[k]
        ta0, tm0 = s.t_zone, s.t_mass
        free_a = ad[0, 0] * ta0 + ad[0, 1] * tm0 + bd[0, 0] * to + bd[0, 1] * qa + bd[0, 2] * qm
        free_m = ad[1, 0] * ta0 + ad[1, 1] * tm0 + bd[1, 0] * to + bd[1, 1] * qa + bd[1, 2] * qm
        gain = -bd[0, 3]                      # drop in end-of-step Ta per watt of cooling
        cap_w = self.capacity_kw * 1000.0
        q_cool = 0.0
        if free_a > setpoint:
            q_cool = min((free_a - setpoint) / gain, cap_w)
        ta1 = free_a + bd[0, 3] * q_cool
        tm1 = free_m + bd[1, 3] * q_cool
        if q_cool < cap_w and free_a > setpoint:
            ta1 = setpoint                    # exact by construction; removes rounding drift

        # TES: charge while the building is closed, discharge against load while open.
        p = self.params
        cool_kw = q_cool / 1000.0
        charge_kw = discharge_kw = 0.0
        soc = s.tes_soc
        if self.tes_capacity_kwh > 0:
            room = (1.0 - soc) * self.tes_capacity_kwh / self.dt_h
            avail = soc * self.tes_capacity_kwh / self.dt_h
            if self._open[k]:
                discharge_kw = min(p.tes_discharge_kw, avail, cool_kw)
            else:
                charge_kw = min(p.tes_charge_kw, room)
            soc += (charge_kw - discharge_kw) * self.dt_h / self.tes_capacity_kwh
            soc = min(max(soc, 0.0), 1.0)
        hvac_kw = (cool_kw - discharge_kw + charge_kw) / p.cop
        e_hvac = hvac_kw * self.dt_h
        e_total = e_hvac + self._base_kw[k] * self.dt_h

        ts = s.sim_clock
        s.t_zone, s.t_mass, s.tes_soc = ta1, tm1, soc
        s.sim_clock = ts + self.step_td
        s.hvac_lag.appendleft(hvac_kw)
        s.t_zone_lag.appendleft(ta1)
        self._last_total_kw = e_total / self.dt_h
        k1 = k + 1
        if not record:
            return None
        return StepResult(ts, setpoint, ta1, tm1, float(self._t_min[k1]), float(self._t_max[k1]),
                          e_hvac, e_total, self._price[k], soc, cool_kw,
                          self.build_observation(), self._finish(k1))

    def _finish(self, next_index: int) -> bool:
        self._done = next_index >= self._end_index
        return self._done

    def tes_temperature(self) -> float:
        p = self.params
        return p.tes_supply_temp_c + (1.0 - self.state.tes_soc) * p.tes_delta_t_k

    def build_observation(self) -> np.ndarray:
        """Normalized feature vector for the current instant (see ``FEATURES``)."""
        s = self.state
        k = self.traces.index_of(s.sim_clock)
        look = [k + h * self.steps_per_hour for h in range(1, LOOKAHEAD_HOURS + 1)]
        if look[-1] >= len(self.traces):
            raise TraceError("trace gap: first missing timestamp "
                             f"{self.traces.timestamp(len(self.traces)).isoformat()}")
        nm, sp = self._norm, self._specs
        obs = [nm["price"][k], normalize(s.hvac_lag[0], sp["hvac_kw"]),
               normalize(self._last_total_kw, sp["total_kw"]), normalize(s.t_zone, sp["t_zone"]),
               nm["day_of_week"][k], nm["hour_of_day"][k], nm["tdb"][k], nm["twb"][k],
               nm["wind"][k], nm["wind_dir"][k], nm["rh"][k], nm["solar"][k]]
        if self.state_set >= StateSpaceSet.SET_II:
            obs += [nm["price"][j] for j in look]
            obs += [normalize(self.tes_temperature(), sp["tes_temp"]), nm["occupancy"][k]]
            obs += [normalize(v, sp["hvac_kw"]) for v in list(s.hvac_lag)[1:]]
            obs += [normalize(v, sp["t_zone"]) for v in list(s.t_zone_lag)[1:]]
        if self.state_set >= StateSpaceSet.SET_III:
            for key in ("tdb", "twb", "rh", "solar"):
                obs += [nm[key][j] for j in look]
        return np.array(obs, dtype=float)


def _as_datetime(value) -> datetime:
    if isinstance(value, datetime):
        return value
    return datetime.fromisoformat(str(value))
