"""Command line entry point: ``flexsac {train,evaluate,sweep,robustness,transfer,gen-traces}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import tomli

from . import harness as H
from .core import ConfigError, RunConfig, apply_overrides, load_config
from .nn import CheckpointError, ShapeError
from .reward_metrics import write_summary_csv
from .sac import SacAgent, TrainingDiverged
from .traces import TraceError, generate_traces

EXIT_OK, EXIT_CONFIG, EXIT_TRACE, EXIT_RUN = 0, 2, 3, 4

log = logging.getLogger("flexsac")


def _parse_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x)


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="runs", help="output root directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--set", type=int, choices=(1, 2, 3), dest="state_set",
                        help="state-space feature set")
    common.add_argument("-o", "--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted config override, e.g. sac.gamma=0.95 (repeatable)")
    common.add_argument("--name", help="experiment name (directory under --out)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="flexsac", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="train one agent")

    ev = sub.add_parser("evaluate", parents=[common], help="deploy a checkpoint against the RBC")
    ev.add_argument("checkpoint")
    ev.add_argument("--start", help="evaluation window start (ISO timestamp)")
    ev.add_argument("--days", type=int)

    sw = sub.add_parser("sweep", parents=[common], help="hyperparameter grid sweep")
    sw.add_argument("--gammas", type=_floats, default=(0.99, 0.95, 0.9))
    sw.add_argument("--alphas", type=_floats, default=(0.05, 0.2))
    sw.add_argument("--lambdas", type=_floats, default=(100.0, 500.0, 1000.0))
    sw.add_argument("--seeds", type=_ints, default=(0, 1, 2))
    sw.add_argument("--episodes", type=int)

    rb = sub.add_parser("robustness", parents=[common],
                        help="training length x update frequency grid")
    rb.add_argument("--episodes-grid", type=_ints, default=H.TABLE7_EPISODES)
    rb.add_argument("--update-grid", type=_ints, default=H.TABLE7_UPDATE_STEPS)
    rb.add_argument("--seeds", type=_ints, default=(0,))
    rb.add_argument("--month", default="2017-06",
                    help="training month for the down-scaled episodes (YYYY-MM)")

    tf = sub.add_parser("transfer", parents=[common], help="deploy a checkpoint elsewhere")
    tf.add_argument("checkpoint")
    tf.add_argument("--climates", type=_ints, default=())
    tf.add_argument("--traces", nargs="*", default=[])
    tf.add_argument("--season", choices=("summer", "transition"), default="summer")

    gt = sub.add_parser("gen-traces", parents=[common], help="write the synthetic trace CSV")
    gt.add_argument("--climate", type=int)
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.override:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        overrides[key.strip()] = _parse_value(value.strip())
    if args.seed is not None:
        overrides["sac.seed"] = args.seed
    if args.state_set is not None:
        overrides["run.state_space_set"] = args.state_set
    cfg = apply_overrides(cfg, overrides) if overrides else cfg
    cfg.validate()
    return cfg


def _print_comparison(comp) -> None:
    s = comp.summary()
    print(f"{comp.label or 'evaluation'}: cost {s['drl_energy_cost']:.1f} vs {s['rbc_energy_cost']:.1f}"
          f" ({_pct(s['d_cost_pct'])}), discomfort {s['drl_discomfort_degree_hours']:.2f} vs "
          f"{s['rbc_discomfort_degree_hours']:.2f} Kh ({_pct(s['d_discomfort_pct'])})")


def _pct(v) -> str:
    return "undefined" if v is None else f"{v:+.1f} %"


def _load_agent(path) -> SacAgent:
    return SacAgent.load_checkpoint(path)


def run(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out)
    if args.command == "train":
        run_dir = out / (args.name or "train") / "default" / str(cfg.hyperparams.seed)
        result = H.train_and_write(cfg, run_dir)
        last = result.episodes[-1]
        print(f"trained {cfg.episodes} episodes, final reward {last['reward_total']:.1f}; "
              f"wrote {run_dir}")
    elif args.command == "evaluate":
        if args.start:
            cfg = apply_overrides(cfg, {"run.eval_start": args.start})
        if args.days:
            cfg = apply_overrides(cfg, {"run.eval_days": args.days})
        agent = _load_agent(args.checkpoint)
        traces = H.run_traces(cfg)
        comp = H.evaluate(agent, cfg, traces)
        H.write_comparison(out / (args.name or "evaluate"), comp)
        _print_comparison(comp)
    elif args.command == "sweep":
        spec = H.ExperimentSpec(args.name or "sweep", args.gammas, args.alphas, args.lambdas,
                                args.seeds, args.state_set, args.episodes)
        points = H.sweep(cfg, spec, out, args.jobs)
        for p in points:
            flag = "  [incomplete]" if p.flagged else ""
            print(f"{p.cell}: cost {_pct(p.d_cost_pct)}, discomfort {_pct(p.d_discomfort_pct)}{flag}")
    elif args.command == "robustness":
        cfg = apply_overrides(cfg, H.month_overrides(args.month))
        table = H.robustness(cfg, out, args.name or "robustness", args.episodes_grid,
                             args.update_grid, args.seeds, args.jobs)
        for c in table:
            tags = " [excluded]" * c.excluded + " [incomplete]" * c.flagged
            print(f"{c.cell}: test cost {_pct(c.d_cost_pct)}, discomfort "
                  f"{_pct(c.d_discomfort_pct)}; training cost {_pct(c.train_d_cost_pct)}{tags}")
    elif args.command == "transfer":
        agent = _load_agent(args.checkpoint)
        comps = H.transfer(agent, cfg, args.climates, args.traces, args.season)
        root = out / (args.name or "transfer")
        for i, comp in enumerate(comps):
            H.write_comparison(root / f"target{i}", comp)
            _print_comparison(comp)
        write_summary_csv([c.summary() for c in comps], root.joinpath("transfer_summary.csv"))
    elif args.command == "gen-traces":
        if args.climate is not None:
            cfg = apply_overrides(cfg, {"synthetic.climate_zone": args.climate})
        traces = generate_traces(cfg.synthetic, cfg.schedule, cfg.sim_step_minutes)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{traces.label}.csv"
        traces.to_csv(path)
        print(f"wrote {len(traces)} rows to {path}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except (TrainingDiverged, CheckpointError, ShapeError, H.RunFailure, OSError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
