"""Experiment orchestration: training, evaluation against the RBC, sweeps and robustness.

Runs persist to ``<out>/<experiment>/<cell>/<seed>/`` as plain CSV plus a
config snapshot; aggregation reads only those files. Independent runs may be
dispatched to a bounded process pool.
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import logging
import statistics
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import (DeploymentMode, HyperParams, RunConfig, apply_overrides, config_from_dict,
                   config_to_dict, denormalize_action, save_config, seeded_rng)
from .env import BuildingEnv, StepResult, observation_size, rbc_setpoint
from .nn import ShapeError
from .reward_metrics import (Comparison, EpisodeReport, episode_report, format_cell,
                             step_reward, write_summary_csv, write_trace_csv)
from .sac import SacAgent, Transition
from .traces import CLIMATES, TraceError, TraceSet, generate_traces, load_traces

log = logging.getLogger(__name__)

EXCLUDE_DISCOMFORT_PCT = 150.0
TABLE7_EPISODES = (1, 2, 5, 10, 50)
TABLE7_UPDATE_STEPS = (4, 96, 672)


class RunFailure(RuntimeError):
    pass


# ----------------------------------------------------------------------------- traces & windows

def run_traces(cfg: RunConfig) -> TraceSet:
    if cfg.trace_path:
        return load_traces(cfg.trace_path)
    return generate_traces(cfg.synthetic, cfg.schedule, cfg.sim_step_minutes)


def first_work_week(year: int, month: int) -> datetime:
    """Monday 00:00 of the first Monday-to-Friday week fully inside ``month``."""
    d = date(year, month, 1)
    while d.weekday() != 0:
        d += timedelta(days=1)
    return datetime.combine(d, datetime.min.time())


def eval_window(cfg: RunConfig, traces: TraceSet, month: int = 7) -> tuple[datetime, datetime]:
    if cfg.eval_start:
        start = datetime.fromisoformat(cfg.eval_start)
    else:
        start = first_work_week(datetime.fromisoformat(cfg.episode_start).year, month)
    return start, start + timedelta(days=cfg.eval_days)


# ----------------------------------------------------------------------------- rollouts

def rollout(env: BuildingEnv, controller: Callable[[np.ndarray, datetime], float],
            start=None, end=None) -> list[StepResult]:
    """Run one episode; ``controller(obs, clock)`` returns a setpoint in C."""
    obs = env.reset(start, end)
    results: list[StepResult] = []
    while not env.done:
        results += env.step(controller(obs, env.clock))
        obs = results[-1].observation
    return results


def rbc_controller(cfg: RunConfig):
    return lambda obs, clock: rbc_setpoint(clock, cfg.schedule)


def agent_controller(agent: SacAgent, mode=DeploymentMode.DETERMINISTIC):
    return lambda obs, clock: denormalize_action(agent.select_action(obs, mode))


def _weights(hp: HyperParams) -> tuple[float, float]:
    return hp.beta, hp.lambda_comfort


def report_for(cfg: RunConfig, results: Sequence[StepResult]) -> EpisodeReport:
    return episode_report(results, _weights(cfg.hyperparams), cfg.sim_step_minutes / 60.0)


def compare(cfg: RunConfig, traces: TraceSet, controller, start, end, label="") -> Comparison:
    env = BuildingEnv(cfg, traces)
    drl = report_for(cfg, rollout(env, controller, start, end))
    rbc = report_for(cfg, rollout(env, rbc_controller(cfg), start, end))
    return Comparison(drl, rbc, label)


# ----------------------------------------------------------------------------- training

@dataclass
class TrainResult:
    agent: SacAgent
    episodes: list[dict]
    training_reports: list[EpisodeReport] = field(repr=False)
    rbc_training: EpisodeReport | None = field(default=None, repr=False)

    def training_comparison(self, episode: int = -1) -> Comparison:
        return Comparison(self.training_reports[episode], self.rbc_training,
                          f"training episode {episode % len(self.training_reports) + 1}")


def _control_loop(env: BuildingEnv, agent: SacAgent, obs, cfg: RunConfig,
                  stop: Callable[[], bool]) -> tuple[np.ndarray, list[StepResult]]:
    weights = _weights(cfg.hyperparams)
    dt_h = cfg.sim_step_minutes / 60.0
    results: list[StepResult] = []
    while not env.done and not stop():
        a = agent.select_action(obs, DeploymentMode.STOCHASTIC)
        res = env.step(denormalize_action(a))
        r = sum(step_reward(x, weights, dt_h).total for x in res)
        nxt = res[-1].observation
        agent.observe(Transition(obs, a, r, nxt, res[-1].done), sim_steps=len(res))
        obs = nxt
        results += res
    return obs, results


def train(cfg: RunConfig, traces: TraceSet | None = None,
          progress: Callable[[dict], None] | None = None) -> TrainResult:
    cfg.validate()
    traces = traces if traces is not None else run_traces(cfg)
    env = BuildingEnv(cfg, traces)
    agent = SacAgent(observation_size(cfg.state_space_set), cfg.hyperparams, cfg.state_space_set)

    # replay prefill with uniform random actions, kept out of the episode metrics
    while agent.in_warmup:
        obs = env.reset()
        _control_loop(env, agent, obs, cfg, stop=lambda: not agent.in_warmup)

    rows, reports = [], []
    for ep in range(1, cfg.episodes + 1):
        obs = env.reset()
        _, results = _control_loop(env, agent, obs, cfg, stop=lambda: False)
        rep = report_for(cfg, results)
        reports.append(rep)
        row = {"episode": ep, "reward_total": rep.reward_total, "reward_cost": rep.reward_cost,
               "reward_comfort": rep.reward_comfort}
        rows.append(row)
        log.info("episode %d/%d reward %.1f (cost %.1f, comfort %.1f) updates %d", ep,
                 cfg.episodes, rep.reward_total, rep.reward_cost, rep.reward_comfort,
                 agent.updates_done)
        if progress is not None:
            progress(row)
    rbc = report_for(cfg, rollout(env, rbc_controller(cfg)))
    return TrainResult(agent, rows, reports, rbc)


def evaluate(agent: SacAgent, cfg: RunConfig, traces: TraceSet,
             window: tuple[datetime, datetime] | None = None, label: str = "") -> Comparison:
    if agent.obs_dim != observation_size(cfg.state_space_set):
        raise ShapeError(f"checkpoint expects {agent.obs_dim} features, state space set "
                         f"{cfg.state_space_set} provides {observation_size(cfg.state_space_set)}")
    start, end = window or eval_window(cfg, traces)
    mode = DeploymentMode(cfg.deployment_mode)
    return compare(cfg, traces, agent_controller(agent, mode), start, end, label)


# ----------------------------------------------------------------------------- metrics on traces

def price_blocks(report: EpisodeReport, width_h: int = 4) -> tuple[list[int], list[int]]:
    """Hours of day forming the cheapest and dearest contiguous ``width_h`` blocks."""
    by_hour: dict[int, list[float]] = {h: [] for h in range(24)}
    for row in report.trace:
        by_hour[datetime.fromisoformat(row["timestamp"]).hour].append(row["price"])
    hourly = np.array([np.mean(by_hour[h]) for h in range(24)])
    means = [hourly[s:s + width_h].mean() for s in range(0, 25 - width_h)]
    lo, hi = int(np.argmin(means)), int(np.argmax(means))
    return list(range(lo, lo + width_h)), list(range(hi, hi + width_h))


def precool_margin(report: EpisodeReport, width_h: int = 4) -> float:
    """Mean setpoint in the dearest block minus mean setpoint in the cheapest block."""
    cheap, dear = price_blocks(report, width_h)
    hours = np.array([datetime.fromisoformat(r["timestamp"]).hour for r in report.trace])
    sp = np.array([r["setpoint"] for r in report.trace])
    return float(sp[np.isin(hours, dear)].mean() - sp[np.isin(hours, cheap)].mean())


# ----------------------------------------------------------------------------- run directories

EPISODE_COLUMNS = ("episode", "reward_total", "reward_cost", "reward_comfort")
LOSS_COLUMNS = ("step", "q1_loss", "q2_loss", "policy_loss", "entropy")


def _write_rows(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: format_cell(v) for k, v in row.items() if k in columns})


def read_rows(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_run(out: Path, cfg: RunConfig, traces: TraceSet, result: TrainResult) -> None:
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.toml")
    (out / "seed.txt").write_text(f"{cfg.hyperparams.seed}\n")
    (out / "traces.sha256").write_text(f"{traces.content_hash()}  {traces.label}\n")
    _write_rows(out / "episodes.csv", EPISODE_COLUMNS, result.episodes)
    _write_rows(out / "losses.csv", LOSS_COLUMNS,
                [dataclasses.asdict(r) for r in result.agent.loss_log])
    training = [dict(episode=i + 1, **rep.summary())
                for i, rep in enumerate(result.training_reports)]
    write_summary_csv(training, out / "training_reports.csv")
    write_summary_csv([result.rbc_training.summary()], out / "rbc_training_report.csv")
    result.agent.save_checkpoint(out / "checkpoint.bin")


def write_comparison(out: Path, comp: Comparison, prefix: str = "eval") -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_summary_csv([comp.summary()], out / f"{prefix}_summary.csv")
    write_trace_csv(comp.drl, out / f"{prefix}_drl_trace.csv")
    write_trace_csv(comp.rbc, out / f"{prefix}_rbc_trace.csv")


def train_and_write(cfg: RunConfig, out: Path, traces: TraceSet | None = None) -> TrainResult:
    traces = traces if traces is not None else run_traces(cfg)
    result = train(cfg, traces)
    write_run(out, cfg, traces, result)
    return result


# ----------------------------------------------------------------------------- parallel jobs

def _run_job(job: dict) -> dict:
    """Train + evaluate one (cell, seed); never raises, failures are recorded on disk."""
    out = Path(job["out"])
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = config_from_dict(job["config"])
        traces = run_traces(cfg)
        result = train_and_write(cfg, out, traces)
        comp = evaluate(result.agent, cfg, traces)
        write_comparison(out, comp)
        train_comp = result.training_comparison(0)
        write_summary_csv([train_comp.summary()], out / "training_vs_rbc.csv")
        summary = {"status": "ok", "d_cost_pct": comp.d_cost_pct,
                   "d_discomfort_pct": comp.d_discomfort_pct,
                   "drl_discomfort": comp.drl.discomfort_degree_hours,
                   "rbc_discomfort": comp.rbc.discomfort_degree_hours,
                   "precool_margin": precool_margin(comp.drl),
                   "train_d_cost_pct": train_comp.d_cost_pct,
                   "train_d_discomfort_pct": train_comp.d_discomfort_pct,
                   "train_drl_discomfort": train_comp.drl.discomfort_degree_hours,
                   "train_rbc_discomfort": train_comp.rbc.discomfort_degree_hours}
    except Exception as exc:  # isolation: one failing run must not sink the sweep
        (out / "failed.txt").write_text(traceback.format_exc())
        summary = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    (out / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def run_jobs(jobs: list[dict], n_workers: int = 1) -> None:
    if n_workers <= 1 or len(jobs) <= 1:
        for job in jobs:
            _run_job(job)
        return
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        list(pool.map(_run_job, jobs))


def _mean(values):
    values = [v for v in values if v is not None]
    return statistics.fmean(values) if values else None


def _load_results(cell_dir: Path, seeds: Sequence[int]) -> list[dict]:
    out = []
    for seed in seeds:
        path = cell_dir / str(seed) / "result.json"
        out.append(json.loads(path.read_text()) if path.exists()
                   else {"status": "failed", "error": "missing result"})
    return out


# ----------------------------------------------------------------------------- sweep

@dataclass
class ExperimentSpec:
    name: str = "sweep"
    gammas: tuple[float, ...] = (0.99, 0.95, 0.9)
    alphas: tuple[float, ...] = (0.05, 0.2)
    lambdas: tuple[float, ...] = (100.0, 500.0, 1000.0)
    seeds: tuple[int, ...] = (0, 1, 2)
    state_space_set: int | None = None
    episodes: int | None = None

    def validate(self) -> None:
        if not (self.gammas and self.alphas and self.lambdas):
            raise ValueError("experiment grid is empty")
        if len(self.seeds) < 1:
            raise ValueError("need at least one seed")

    def cells(self) -> list[tuple[str, dict]]:
        out = []
        for g, a, lam in itertools.product(self.gammas, self.alphas, self.lambdas):
            out.append((f"g{g}_a{a}_l{lam:g}",
                        {"sac.gamma": g, "sac.alpha": a, "sac.lambda_comfort": lam}))
        return out


@dataclass
class ParetoPoint:
    cell: str
    d_cost_pct: float | None
    d_discomfort_pct: float | None
    n_ok: int
    n_runs: int
    params: dict = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return self.n_ok < self.n_runs

    def row(self) -> dict:
        return {"cell": self.cell, **self.params, "d_cost_pct": self.d_cost_pct,
                "d_discomfort_pct": self.d_discomfort_pct, "n_ok": self.n_ok,
                "n_runs": self.n_runs, "flagged": self.flagged}


def _cell_config(base: RunConfig, overrides: dict, seed: int) -> dict:
    """Config dict for one run; validation happens inside the job so a bad cell fails alone."""
    data = config_to_dict(base)
    for dotted, value in {**overrides, "sac.seed": seed}.items():
        section, key = dotted.split(".")
        data[section][key] = value
    return data


def sweep(base: RunConfig, spec: ExperimentSpec, out: str | Path, jobs: int = 1) -> list[ParetoPoint]:
    spec.validate()
    root = Path(out) / spec.name
    common = {}
    if spec.state_space_set is not None:
        common["run.state_space_set"] = spec.state_space_set
    if spec.episodes is not None:
        common["run.episodes"] = spec.episodes
    cells = spec.cells()
    work = [{"config": _cell_config(base, {**common, **ov}, seed),
             "out": str(root / cell / str(seed))}
            for cell, ov in cells for seed in spec.seeds]
    run_jobs(work, jobs)
    points = []
    for cell, ov in cells:
        res = _load_results(root / cell, spec.seeds)
        ok = [r for r in res if r["status"] == "ok"]
        params = {k.split(".")[1]: v for k, v in ov.items()}
        points.append(ParetoPoint(cell, _mean(r["d_cost_pct"] for r in ok),
                                  _mean(r["d_discomfort_pct"] for r in ok), len(ok), len(res),
                                  params))
    write_summary_csv([p.row() for p in points], root / "pareto.csv")
    write_summary_csv([dict(p.row(), marker_shape=p.params.get("gamma"),
                            marker_colour=p.params.get("alpha"),
                            marker_size=p.params.get("lambda_comfort")) for p in points],
                      root / "pareto_plot_data.csv")
    return points


# ----------------------------------------------------------------------------- robustness

@dataclass
class RobustnessCell:
    cell: str
    episodes: int
    update_interval: int
    d_cost_pct: float | None
    d_discomfort_pct: float | None
    train_d_cost_pct: float | None
    train_d_discomfort_pct: float | None
    train_drl_discomfort: float | None
    train_rbc_discomfort: float | None
    n_ok: int
    n_runs: int

    @property
    def excluded(self) -> bool:
        return self.d_discomfort_pct is not None and self.d_discomfort_pct > EXCLUDE_DISCOMFORT_PCT

    @property
    def flagged(self) -> bool:
        return self.n_ok < self.n_runs

    def row(self) -> dict:
        return dict(dataclasses.asdict(self), excluded=self.excluded, flagged=self.flagged)


def month_overrides(month: str) -> dict:
    """Episode window covering one calendar month, e.g. ``"2017-06"``."""
    start = datetime.strptime(month, "%Y-%m")
    end = (start + timedelta(days=32)).replace(day=1)
    return {"run.episode_start": start.isoformat(timespec="minutes"),
            "run.episode_end": end.isoformat(timespec="minutes")}


def robustness(base: RunConfig, out: str | Path, name: str = "robustness",
               episodes: Sequence[int] = TABLE7_EPISODES,
               update_steps: Sequence[int] = TABLE7_UPDATE_STEPS,
               seeds: Sequence[int] = (0,), jobs: int = 1) -> list[RobustnessCell]:
    root = Path(out) / name
    cells = [(f"ep{e}_upd{u}", e, u) for e, u in itertools.product(episodes, update_steps)]
    work = [{"config": _cell_config(base, {"run.episodes": e,
                                           "sac.update_interval_sim_steps": u}, seed),
             "out": str(root / cell / str(seed))}
            for cell, e, u in cells for seed in seeds]
    run_jobs(work, jobs)
    table = []
    for cell, e, u in cells:
        res = _load_results(root / cell, seeds)
        ok = [r for r in res if r["status"] == "ok"]
        table.append(RobustnessCell(
            cell, e, u, _mean(r["d_cost_pct"] for r in ok),
            _mean(r["d_discomfort_pct"] for r in ok),
            _mean(r["train_d_cost_pct"] for r in ok),
            _mean(r["train_d_discomfort_pct"] for r in ok),
            _mean(r["train_drl_discomfort"] for r in ok),
            _mean(r["train_rbc_discomfort"] for r in ok), len(ok), len(res)))
    write_summary_csv([c.row() for c in table], root / "robustness.csv")
    write_summary_csv([c.row() for c in table if not c.excluded], root / "pareto_plot_data.csv")
    return table


# ----------------------------------------------------------------------------- transfer

def transfer_targets(cfg: RunConfig, climates: Sequence[int] = (), trace_paths: Sequence[str] = (),
                     season: str = "summer") -> list[tuple[str, RunConfig, TraceSet, tuple]]:
    """Resolve deployment targets into (label, config, traces, eval window) tuples."""
    month = {"summer": 7, "transition": 9}.get(season)
    if month is None:
        raise ValueError(f"season must be 'summer' or 'transition', got {season!r}")
    tag = "summer" if month == 7 else "transition season"
    targets = []
    for zone in climates:
        if zone not in CLIMATES:
            raise TraceError(f"unknown climate zone {zone}")
        tcfg = apply_overrides(cfg, {"synthetic.climate_zone": zone})
        traces = generate_traces(tcfg.synthetic, tcfg.schedule, tcfg.sim_step_minutes)
        label = f"zone {zone} ({CLIMATES[zone].location}), {tag}"
        targets.append((label, tcfg, traces, eval_window(tcfg, traces, month)))
    for path in trace_paths:
        traces = load_traces(path)
        targets.append((f"{traces.label}, {tag}", cfg, traces, eval_window(cfg, traces, month)))
    if not climates and not trace_paths:
        traces = run_traces(cfg)
        targets.append((f"{traces.label}, {tag}", cfg, traces, eval_window(cfg, traces, month)))
    return targets


def transfer(agent: SacAgent, cfg: RunConfig, climates: Sequence[int] = (),
             trace_paths: Sequence[str] = (), season: str = "summer") -> list[Comparison]:
    return [evaluate(agent, tcfg, traces, window, label)
            for label, tcfg, traces, window in transfer_targets(cfg, climates, trace_paths, season)]


# ----------------------------------------------------------------------------- bandit probe

def bandit_entropy(alpha: float, seed: int, updates: int = 1500, target: float = 0.6,
                   curvature: float = 4.0, n_mc: int = 100_000) -> float:
    """Train on a one-state bandit with reward ``-curvature * (a - target)**2``.

    Every transition is terminal, so the critics regress the immediate reward
    and the converged policy approximates ``exp(Q / alpha)``. Returns a
    Monte-Carlo estimate of the policy entropy at the fixed state.
    """
    hp = HyperParams(alpha=alpha, seed=seed, minibatch_size=256, buffer_capacity=10_000,
                     update_interval_sim_steps=1, warmup_random_control_steps=256,
                     hidden_size=32, init_log_std=0.0)
    agent = SacAgent(1, hp)
    state = np.array([0.5])
    for _ in range(hp.warmup_random_control_steps + updates):
        a = agent.select_action(state)
        r = -curvature * (a - target) ** 2
        agent.observe(Transition(state, a, r, state, True))
    raw = agent.policy.forward(state, keep_cache=False)
    from .nn import sample_squashed_gaussian
    out = sample_squashed_gaussian(np.full(n_mc, raw[0]), np.full(n_mc, raw[1]),
                                   seeded_rng(seed, "entropy-mc"))
    return float(-out.log_prob.mean())
