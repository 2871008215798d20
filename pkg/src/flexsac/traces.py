"""Weather / price / occupancy traces: CSV ingestion, validation, synthetic generation."""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .core import ScheduleParams, SyntheticTraceParams, seeded_rng

COLUMNS = ("timestamp", "tdb_c", "twb_c", "rh_pct", "wind_mps", "wind_deg", "solar_wm2",
           "price_per_kwh", "occupancy")
FIELDS = COLUMNS[1:]


class TraceError(ValueError):
    """Trace coverage, cadence or content problem."""


class TraceParseError(TraceError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class TraceSet:
    start: datetime
    step: timedelta
    tdb_c: np.ndarray
    twb_c: np.ndarray
    rh_pct: np.ndarray
    wind_mps: np.ndarray
    wind_deg: np.ndarray
    solar_wm2: np.ndarray
    price_per_kwh: np.ndarray
    occupancy: np.ndarray
    label: str = ""

    def __post_init__(self) -> None:
        n = len(self.tdb_c)
        for name in FIELDS:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise TraceError(f"column {name} has length {arr.shape}, expected {n}")
            if not np.all(np.isfinite(arr)):
                raise TraceError(f"column {name} contains non-finite values")
            setattr(self, name, arr)
        if np.any(self.price_per_kwh <= 0):
            bad = int(np.argmax(self.price_per_kwh <= 0))
            raise TraceError(f"price must be positive (row for {self.timestamp(bad)})")
        if np.any((self.occupancy < 0) | (self.occupancy > 1)):
            bad = int(np.argmax((self.occupancy < 0) | (self.occupancy > 1)))
            raise TraceError(f"occupancy outside [0, 1] (row for {self.timestamp(bad)})")

    def __len__(self) -> int:
        return len(self.tdb_c)

    @property
    def end(self) -> datetime:
        """Timestamp of the last row."""
        return self.timestamp(len(self) - 1)

    def timestamp(self, index: int) -> datetime:
        return self.start + index * self.step

    def index_of(self, ts: datetime) -> int:
        offset = ts - self.start
        if offset % self.step:
            raise TraceError(f"{ts.isoformat()} is not on the trace grid")
        return offset // self.step

    def require(self, first: datetime, last: datetime) -> None:
        """Raise unless rows exist for every grid instant in [first, last]."""
        if first < self.start:
            raise TraceError(f"trace gap: first missing timestamp {first.isoformat()}")
        if last > self.end:
            missing = max(first, self.end + self.step)
            raise TraceError(f"trace gap: first missing timestamp {missing.isoformat()}")

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        cols = [getattr(self, name) for name in FIELDS]
        for i in range(len(self)):
            row = [self.timestamp(i).isoformat(timespec="seconds") + "+00:00"]
            row += [repr(float(c[i])) for c in cols]
            writer.writerow(row)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_csv().encode("utf-8")).hexdigest()


def _parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    # Building-local wall-clock time drives the calendar features.
    return ts.replace(tzinfo=None)


def load_traces(path: str | Path, label: str = "") -> TraceSet:
    """Read a trace CSV (header required, RFC 3339 timestamps, fixed cadence)."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise TraceError(f"cannot open trace file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != list(COLUMNS):
            raise TraceParseError(1, f"header must be {','.join(COLUMNS)}")
        stamps: list[datetime] = []
        values: list[list[float]] = []
        offsets = set()
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(COLUMNS):
                raise TraceParseError(line, f"expected {len(COLUMNS)} fields, got {len(row)}")
            try:
                raw = row[0].strip()
                offsets.add(datetime.fromisoformat(raw.replace("Z", "+00:00")).utcoffset())
                stamps.append(_parse_timestamp(raw))
            except ValueError:
                raise TraceParseError(line, f"bad timestamp {row[0]!r}") from None
            try:
                values.append([float(c) for c in row[1:]])
            except ValueError:
                raise TraceParseError(line, "non-numeric value") from None
    if len(stamps) < 2:
        raise TraceError(f"{path}: need at least two rows")
    if len(offsets) > 1:
        raise TraceError(f"{path}: mixed UTC offsets")
    step = stamps[1] - stamps[0]
    if step <= timedelta(0):
        raise TraceError(f"non-monotone timestamps at {stamps[1].isoformat()}")
    for prev, cur in zip(stamps, stamps[1:]):
        if cur <= prev:
            raise TraceError(f"non-monotone timestamps at {cur.isoformat()}")
        if cur - prev != step:
            raise TraceError(f"trace gap: first missing timestamp {(prev + step).isoformat()}")
    cols = np.array(values, dtype=float).T
    return TraceSet(stamps[0], step, *cols, label=label or Path(path).stem)


# ----------------------------------------------------------------------------- schedule

def is_open(ts: datetime, schedule: ScheduleParams) -> bool:
    """Building operating hours (weekdays and Saturday morning; closed Sunday)."""
    wd = ts.weekday()
    h = ts.hour + ts.minute / 60.0
    if wd < 5:
        return schedule.weekday_open_h <= h < schedule.weekday_close_h
    if wd == 5:
        return schedule.saturday_open_h <= h < schedule.saturday_close_h
    return False


class ComfortSchedule:
    """Time-varying comfort band: tight while the building is open, wide otherwise."""

    def __init__(self, schedule: ScheduleParams):
        self.schedule = schedule

    def bounds(self, ts: datetime) -> tuple[float, float]:
        s = self.schedule
        if is_open(ts, s):
            return s.occupied_t_min, s.occupied_t_max
        return s.unoccupied_t_min, s.unoccupied_t_max


# ----------------------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class Climate:
    zone: int
    location: str
    mean_c: float          # annual mean drybulb
    seasonal_amp_c: float  # positive: warmest in July (northern hemisphere)
    diurnal_amp_c: float
    latitude: float
    rh_mean: float
    wind_mean: float


# Stand-in climates for the nine ASHRAE zones; coarse monthly-normal scale figures.
CLIMATES = {
    0: Climate(0, "Darwin, Australia", 27.6, -1.8, 4.5, -12.4, 68.0, 3.5),
    1: Climate(1, "Miami, USA", 25.2, 3.6, 4.0, 25.8, 72.0, 4.0),
    2: Climate(2, "Cairo, Egypt", 22.3, 7.2, 6.5, 30.1, 52.0, 3.8),
    3: Climate(3, "Rome, Italy", 15.6, 8.6, 5.5, 41.8, 66.0, 3.0),
    4: Climate(4, "Vancouver, Canada", 10.4, 6.6, 3.8, 49.2, 76.0, 3.2),
    5: Climate(5, "Dublin, Ireland", 9.8, 4.8, 3.5, 53.4, 80.0, 5.0),
    6: Climate(6, "Datong, China", 7.0, 14.8, 6.5, 40.1, 52.0, 3.0),
    7: Climate(7, "Tampere, Finland", 4.6, 11.8, 4.5, 61.5, 76.0, 3.2),
    8: Climate(8, "Fairbanks, USA", -2.4, 19.6, 5.0, 64.8, 66.0, 2.5),
}


def wetbulb_stull(tdb_c, rh_pct):
    """Wet-bulb temperature from drybulb and RH (Stull 2011 empirical fit)."""
    t = np.asarray(tdb_c, dtype=float)
    rh = np.clip(np.asarray(rh_pct, dtype=float), 5.0, 99.0)
    return (t * np.arctan(0.151977 * np.sqrt(rh + 8.313659)) + np.arctan(t + rh)
            - np.arctan(rh - 1.676331) + 0.00391838 * rh ** 1.5 * np.arctan(0.023101 * rh)
            - 4.686035)


def synthetic_occupancy(ts: datetime, schedule: ScheduleParams) -> float:
    if not is_open(ts, schedule):
        return 0.0
    h = ts.hour + ts.minute / 60.0
    if ts.weekday() == 5:
        return 0.3
    profile = ((7, 0.1), (8, 0.5), (12, 0.95), (13, 0.8), (17, 0.95), (18, 0.7), (22, 0.3))
    for until, value in profile:
        if h < until:
            return value
    return 0.1


def generate_traces(params: SyntheticTraceParams | None = None,
                    schedule: ScheduleParams | None = None,
                    step_minutes: int = 15) -> TraceSet:
    """Synthetic traces: diurnal/seasonal temperature, clear-sky-like solar, tiered price.

    Price follows a night tier (00:00-06:00) dipping towards a pre-dawn trough,
    a day tier, and an evening peak tier, each scaled by a random daily
    factor; a small hourly jitter keeps equal-tier hours distinguishable.
    """
    params = params or SyntheticTraceParams()
    schedule = schedule or ScheduleParams()
    params.validate()
    climate = CLIMATES.get(params.climate_zone)
    if climate is None:
        raise TraceError(f"unknown climate zone {params.climate_zone}")
    start = datetime.combine(date.fromisoformat(params.start), datetime.min.time())
    end = datetime.combine(date.fromisoformat(params.end), datetime.min.time())
    step = timedelta(minutes=step_minutes)
    n = (end - start) // step
    n_days = math.ceil(n * step_minutes / 1440) + 1
    rng = seeded_rng(params.seed, f"traces-{climate.zone}")

    # Day-level weather anomalies follow an AR(1) process.
    anomaly = np.empty(n_days)
    anomaly[0] = 0.0
    for d in range(1, n_days):
        anomaly[d] = 0.7 * anomaly[d - 1] + rng.normal(0.0, 1.2)
    clearness = np.clip(rng.normal(0.85, 0.12, n_days), 0.3, 1.0)
    rh_day = rng.normal(0.0, 6.0, n_days)
    wind_day = np.clip(rng.normal(climate.wind_mean, 1.0, n_days), 0.3, None)
    price_day = 1.0 + rng.normal(0.0, params.price_noise, n_days)
    hourly_jitter = rng.normal(0.0, 0.01, n_days * 24)

    times = [start + i * step for i in range(n)]
    day_idx = np.array([(t - start).days for t in times])
    hour = np.array([t.hour + t.minute / 60.0 for t in times])
    doy = np.array([t.timetuple().tm_yday for t in times], dtype=float)

    season = np.cos(2.0 * np.pi * (doy - 200.0) / 365.0)
    diurnal = np.cos(2.0 * np.pi * (hour - 15.0) / 24.0)
    tdb = climate.mean_c + climate.seasonal_amp_c * season + climate.diurnal_amp_c * diurnal \
        + anomaly[day_idx]

    lat = np.radians(climate.latitude)
    decl = np.radians(23.44) * np.sin(2.0 * np.pi * (doy - 81.0) / 365.0)
    cos_h0 = np.clip(-np.tan(lat) * np.tan(decl), -1.0, 1.0)
    day_len = 24.0 * np.arccos(cos_h0) / np.pi
    sunrise = 12.0 - day_len / 2.0
    frac = (hour - sunrise) / np.maximum(day_len, 1e-6)
    noon_elev = np.cos(lat - decl)
    solar = np.where((frac > 0) & (frac < 1), np.sin(np.pi * np.clip(frac, 0, 1)), 0.0)
    solar = 900.0 * np.clip(noon_elev, 0.0, 1.0) * clearness[day_idx] * solar

    rh = np.clip(climate.rh_mean - 1.8 * climate.diurnal_amp_c * diurnal + rh_day[day_idx],
                 10.0, 100.0)
    twb = np.minimum(wetbulb_stull(tdb, rh), tdb)
    wind = np.clip(wind_day[day_idx] * (1.0 + 0.3 * np.sin(2.0 * np.pi * (hour - 14.0) / 24.0)),
                   0.0, None)
    wind_deg = np.mod(200.0 + 60.0 * np.sin(2.0 * np.pi * (doy + hour / 24.0) / 9.0), 360.0)

    hour_int = hour.astype(int)
    trough = 1.0 - params.night_trough_depth * np.cos(
        2.0 * np.pi * (hour_int - params.night_trough_h) / 12.0)
    tier = np.where(hour < 6.0, params.price_night * trough,
                    np.where((hour >= params.peak_start_h) & (hour < params.peak_end_h),
                             params.price_peak, params.price_day))
    hour_idx = day_idx * 24 + hour_int
    price = tier * np.clip(price_day[day_idx], 0.5, 1.5) * (1.0 + hourly_jitter[hour_idx])

    occupancy = np.array([synthetic_occupancy(t, schedule) for t in times])
    label = f"synthetic-zone{climate.zone}"
    return TraceSet(start, step, tdb, twb, rh, wind, wind_deg, solar, price, occupancy,
                    label=label)
