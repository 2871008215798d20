"""Reward shaping and evaluation metrics (energy, cost, discomfort, % change vs. RBC)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ConfigError
from .nn import ShapeError


@dataclass(frozen=True)
class RewardBreakdown:
    cost_term: float
    comfort_term: float

    @property
    def total(self) -> float:
        return self.cost_term + self.comfort_term


def comfort_excursion(t_zone: float, t_min: float, t_max: float) -> float:
    """Distance from ``t_zone`` to the band [t_min, t_max]; zero inside."""
    if t_zone > t_max:
        return t_zone - t_max
    if t_zone < t_min:
        return t_min - t_zone
    return 0.0


def reward(e_hvac: float, price: float, t_zone: float, bounds: tuple[float, float],
           weights: tuple[float, float]) -> RewardBreakdown:
    """Two-term reward: ``-beta * e_hvac * price - lambda * |t_zone - t_lim|``.

    ``t_lim`` is the violated bound, or ``t_zone`` itself inside the band.
    """
    t_min, t_max = bounds
    if not t_max > t_min:
        raise ConfigError(f"comfort band [{t_min}, {t_max}] is empty")
    if e_hvac < 0 or price <= 0:
        raise ValueError("e_hvac must be >= 0 and price > 0")
    beta, lam = weights
    if t_zone < t_min:
        t_lim = t_min
    elif t_zone > t_max:
        t_lim = t_max
    else:
        t_lim = t_zone
    # 0.0 + (-0.0) keeps an exact zero when a term vanishes
    return RewardBreakdown(-beta * e_hvac * price + 0.0, -lam * abs(t_zone - t_lim) + 0.0)


def discomfort_degree_hours(t_zone: Sequence[float], bounds: Sequence[tuple[float, float]],
                            step_hours: float) -> float:
    t = np.asarray(t_zone, dtype=float)
    b = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if t.shape != (b.shape[0],):
        raise ShapeError(f"{t.size} temperatures vs {b.shape[0]} bounds")
    excess = np.maximum.reduce([np.zeros_like(t), t - b[:, 1], b[:, 0] - t])
    return float(excess.sum() * step_hours)


def pct_change(value: float, reference: float) -> float | None:
    """``100 * (value - reference) / reference``; None when the reference is zero."""
    if reference == 0:
        return None
    return 100.0 * (value - reference) / reference


pct_change_cost = pct_change
pct_change_discomfort = pct_change


@dataclass
class EpisodeReport:
    energy_purchased_mwh: float
    energy_cost: float
    discomfort_degree_hours: float
    hvac_energy_mwh: float
    hvac_cost: float
    reward_cost: float
    reward_comfort: float
    n_steps: int
    complete: bool = True
    trace: list[dict] = field(default_factory=list, repr=False)

    @property
    def reward_total(self) -> float:
        return self.reward_cost + self.reward_comfort

    def summary(self) -> dict:
        return {
            "energy_purchased_mwh": self.energy_purchased_mwh,
            "energy_cost": self.energy_cost,
            "discomfort_degree_hours": self.discomfort_degree_hours,
            "hvac_energy_mwh": self.hvac_energy_mwh,
            "hvac_cost": self.hvac_cost,
            "reward_cost": self.reward_cost,
            "reward_comfort": self.reward_comfort,
            "reward_total": self.reward_total,
            "n_steps": self.n_steps,
            "complete": self.complete,
        }


TRACE_COLUMNS = ("timestamp", "t_zone", "setpoint", "e_hvac_kw", "e_total_kw", "price",
                 "reward_cost", "reward_comfort")


def step_reward(result, weights: tuple[float, float], step_hours: float) -> RewardBreakdown:
    """Reward for one sim step; the cost term takes mean HVAC electric demand in W."""
    demand_w = result.e_hvac / step_hours * 1000.0
    return reward(demand_w, result.price, result.t_zone, (result.t_min, result.t_max), weights)


def episode_report(results: Sequence, weights: tuple[float, float], step_hours: float,
                   complete: bool | None = None) -> EpisodeReport:
    """Aggregate sim-step results (see ``env.StepResult``) into an :class:`EpisodeReport`."""
    if not results:
        raise ValueError("cannot build a report from an empty step list")
    if complete is None:
        complete = bool(results[-1].done)
    energy = cost = hvac = hvac_cost = r_cost = r_comfort = 0.0
    rows = []
    for r in results:
        rb = step_reward(r, weights, step_hours)
        energy += r.e_total
        cost += r.e_total * r.price
        hvac += r.e_hvac
        hvac_cost += r.e_hvac * r.price
        r_cost += rb.cost_term
        r_comfort += rb.comfort_term
        rows.append({
            "timestamp": r.timestamp.isoformat(timespec="minutes"),
            "t_zone": r.t_zone, "setpoint": r.setpoint,
            "e_hvac_kw": r.e_hvac / step_hours, "e_total_kw": r.e_total / step_hours,
            "price": r.price, "reward_cost": rb.cost_term, "reward_comfort": rb.comfort_term,
        })
    discomfort = discomfort_degree_hours([r.t_zone for r in results],
                                         [(r.t_min, r.t_max) for r in results], step_hours)
    return EpisodeReport(energy / 1000.0, cost, discomfort, hvac / 1000.0, hvac_cost,
                         r_cost, r_comfort, len(results), complete, rows)


@dataclass
class Comparison:
    """DRL vs. reference report with percentage changes (None = undefined)."""

    drl: EpisodeReport
    rbc: EpisodeReport
    label: str = ""

    @property
    def d_cost_pct(self) -> float | None:
        return pct_change(self.drl.energy_cost, self.rbc.energy_cost)

    @property
    def d_energy_pct(self) -> float | None:
        return pct_change(self.drl.energy_purchased_mwh, self.rbc.energy_purchased_mwh)

    @property
    def d_discomfort_pct(self) -> float | None:
        return pct_change(self.drl.discomfort_degree_hours, self.rbc.discomfort_degree_hours)

    def summary(self) -> dict:
        out = {"label": self.label}
        for prefix, rep in (("drl", self.drl), ("rbc", self.rbc)):
            for key in ("energy_purchased_mwh", "energy_cost", "discomfort_degree_hours"):
                out[f"{prefix}_{key}"] = getattr(rep, key)
        out["d_energy_pct"] = self.d_energy_pct
        out["d_cost_pct"] = self.d_cost_pct
        out["d_discomfort_pct"] = self.d_discomfort_pct
        return out


def write_trace_csv(report: EpisodeReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in report.trace:
            writer.writerow({k: format_cell(v) for k, v in row.items()})


def write_summary_csv(rows: Sequence[dict], path: str | Path) -> None:
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: format_cell(v) for k, v in row.items()})


def format_cell(v):
    """CSV cell text: exact float repr, "undefined" for None."""
    if v is None:
        return "undefined"
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v
