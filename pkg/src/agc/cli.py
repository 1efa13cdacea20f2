"""Command-line front end.

Exit codes: 0 success, 1 invalid input or usage, 2 failure while running.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .bilevel import BilevelConfig, run_bilevel
from .config import ExperimentConfig, load_config
from .domain import DomainError
from .metrics import cumulative_abs_error
from .nn import NetError, TrainingDiverged
from .report import MetricsReport, r2_csv, render_report
from .strategy.ega import ega_optimize, evaluate_schedule, save_history
from .strategy.sac import SacDiverged, TwinEnv, run_episode, policy_act, sac_train, save_policy
from .strategy.schedule import Layout, baseline_schedule
from .trajectory import Dataset, Trajectory, TrajectoryFormatError
from .twin import evaluate_r2, load_simulator, save_simulator, sim_rollout, train_simulator
from .world import WeatherSeries, WorldParams, generate_dataset, generate_weather, replay


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with status 2
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _shift(text: str | None, base: WorldParams) -> WorldParams:
    """``"p_max=0.7,T_opt=0.9"`` -> parameters scaled by those factors."""
    if not text:
        return base
    try:
        scale = {k.strip(): float(v) for k, v in (item.split("=") for item in text.split(","))}
    except ValueError as exc:
        raise DomainError(f"bad --shift {text!r}; expected name=factor[,name=factor]") from exc
    unknown = set(scale) - set(base.to_dict())
    if unknown:
        raise DomainError(f"unknown world parameter(s) in --shift: {sorted(unknown)}")
    return base.shifted(**scale)


def _out(args, default: str) -> Path:
    return Path(args.out if args.out is not None else default)


# ---------------------------------------------------------------------- commands


def cmd_gen_weather(args, cfg: ExperimentConfig) -> int:
    days = args.days or cfg.data.days
    ws = generate_weather(days, args.seed, args.profile or cfg.data.profile)
    path = ws.save(_out(args, "weather.json"))
    print(f"wrote {days} days of weather to {path}")
    return 0


def cmd_gen_data(args, cfg: ExperimentConfig) -> int:
    world = _shift(args.shift, cfg.world)
    n = args.episodes or cfg.data.n_train
    out = _out(args, "data")
    ds = generate_dataset(n, args.days or cfg.data.days, args.seed, world, cfg.econ, args.profile or cfg.data.profile,
                          bounds=cfg.bounds, out_dir=out)
    print(f"wrote {len(ds)} episodes ({ds.n_transitions} transitions) to {out}")
    return 0


def cmd_train_sim(args, cfg: ExperimentConfig) -> int:
    ds = Dataset.load(args.data)
    sim = train_simulator(ds, cfg.arch, args.seed)
    out = save_simulator(sim, _out(args, "sim"))
    losses = sim.history[-1]["losses"]
    for name, v in losses.items():
        print(f"{name:8s} train {v['train_loss']:.4g}  val {v['val_loss']:.4g}")
    print(f"saved simulator to {out}")
    return 0


def cmd_eval_sim(args, cfg: ExperimentConfig) -> int:
    sim = load_simulator(args.sim)
    rep = evaluate_r2(sim, Dataset.load(args.data))
    out = _out(args, "r2.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(r2_csv({k: (rep.clamped[k], rep.raw[k]) for k in rep.clamped}))
    for name, r2, raw in rep.rows():
        print(f"{name:10s} {r2:.4f}  (raw {raw:.4f})")
    print(f"mean {rep.mean:.4f}; wrote {out}")
    return 0


def cmd_optimize(args, cfg: ExperimentConfig) -> int:
    sim = load_simulator(args.sim)
    weather = WeatherSeries.load(args.weather)
    out = _out(args, f"opt_{args.method}")
    out.mkdir(parents=True, exist_ok=True)
    if args.method == "ega":
        hours = 24 * (args.days or len(weather) // 24)
        layout = Layout(hours, cfg.bilevel.control_interval, cfg.bilevel.block_days)
        ega = replace(cfg.ega, seed=args.seed, generations=args.generations if args.generations is not None else cfg.ega.generations)
        seeds = [baseline_schedule("expert_like", layout, bounds=cfg.bounds)]
        best, res = ega_optimize(ega, sim, weather, cfg.econ, layout, cfg.bounds, seeds=seeds)
        best.save(out / "schedule.json")
        save_history(res, out / "fitness.csv")
        world_fit = evaluate_schedule(best, cfg.world, weather, cfg.econ)
        print(f"best twin net profit {res.best_fitness:.4f}; on the reference world {world_fit:.4f} EUR/m2")
    else:
        horizon = 24 * (args.days or 14)
        env = TwinEnv(sim, weather, cfg.econ, horizon, bounds=cfg.bounds, stats_seed=args.seed)
        sac_cfg = cfg.sac if args.steps is None else replace(cfg.sac, total_steps=args.steps)
        res = sac_train(env, sac_cfg, args.seed)
        save_policy(res.policy, out / "policy.json")
        (out / "returns.csv").write_text("step,return\n" + "".join(f"{s},{r!r}\n" for s, r in res.curve))
        final = run_episode(env, lambda o: policy_act(res.policy, o))
        print(f"deterministic twin return {final:.4f} EUR/m2 over {horizon} h")
    print(f"wrote {out}")
    return 0


def cmd_bilevel(args, cfg: ExperimentConfig) -> int:
    sim = load_simulator(args.sim)
    D0 = Dataset.load(args.data) if args.data else Dataset([])
    weather = WeatherSeries.load(args.weather)
    bl = cfg.bilevel
    over = {k: getattr(args, k) for k in ("K1", "K2", "T", "budget") if getattr(args, k) is not None}
    bl = BilevelConfig.from_dict({**bl.to_dict(), **over, "seed": args.seed})
    world = _shift(args.shift, cfg.world)
    res = run_bilevel(bl, sim, D0, world, weather, cfg.econ, cfg.bounds)
    out = _out(args, "bilevel")
    out.mkdir(parents=True, exist_ok=True)
    res.trajectory.save(out / "trajectory.json")
    res.log.save(out / "log.jsonl")
    save_simulator(res.sim, out / "sim")
    if hasattr(res.strategy, "save"):
        res.strategy.save(out / "schedule.json")
    else:
        save_policy(res.strategy, out / "policy.json")
    print(f"net profit on the reference world {res.trajectory.ledger.net_profit:.4f} EUR/m2; "
          f"simulator version {res.sim.version}; wrote {out}")
    return 0


def cmd_report(args, cfg: ExperimentConfig) -> int:
    sim = load_simulator(args.sim)
    test = Dataset.load(args.data)
    rep = evaluate_r2(sim, test)
    control = [Trajectory.load(p) for p in args.control]
    experimental = [Trajectory.load(p) for p in args.experimental]
    horizons = {len(t) for t in control + experimental}
    if len(horizons) != 1:
        raise DomainError(f"all trajectories must share one horizon, got {sorted(horizons)}")
    horizon = horizons.pop()
    curves, cae = {}, {}
    for group, trajs in (("control", control), ("experimental", experimental)):
        for i, tr in enumerate(trajs):
            name = f"{group}_{i}"
            curves[name] = tr.net_profit_curve.tolist()
            twin = sim_rollout(sim, tr.action, tr.weather, econ=cfg.econ)
            cae[name] = cumulative_abs_error(twin.net_profit_curve, tr.net_profit_curve).tolist()
    metrics = MetricsReport(
        horizon,
        {k: (rep.clamped[k], rep.raw[k]) for k in rep.clamped},
        {"control": [t.ledger.to_dict() for t in control], "experimental": [t.ledger.to_dict() for t in experimental]},
        curves,
        cae,
    )
    files = render_report(metrics, _out(args, "report"))
    print(f"wrote {len(files)} files to {_out(args, 'report')}")
    return 0


def cmd_replay(args, cfg: ExperimentConfig) -> int:
    traj = Trajectory.load(args.trajectory)
    again = replay(traj)
    same = again.ledger.to_dict() == traj.ledger.to_dict() and np.array_equal(again.reward, traj.reward)
    if args.out is not None:
        again.save(args.out)
    print(f"net profit {again.ledger.net_profit!r}; ledger {'reproduced bitwise' if same else 'MISMATCH'}")
    return 0 if same else 2


# ------------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="experiment config JSON")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")

    p = _Parser(prog="agc", description="Greenhouse control: reference world, learned twin, strategy search.")
    p.add_argument("--version", action="version", version=f"agc {__version__}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("gen-weather", parents=[common], help="synthesize an hourly weather series")
    s.add_argument("--days", type=int)
    s.add_argument("--profile")
    s.set_defaults(func=cmd_gen_weather)

    s = sub.add_parser("gen-data", parents=[common], help="simulate reference-world episodes under random schedules")
    s.add_argument("--episodes", type=int)
    s.add_argument("--days", type=int)
    s.add_argument("--profile")
    s.add_argument("--shift", help="scale world parameters, e.g. p_max=0.7,T_opt=0.9")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("train-sim", parents=[common], help="fit the twin simulator on a dataset")
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_train_sim)

    s = sub.add_parser("eval-sim", parents=[common], help="one-step R2 of a twin on a test dataset")
    s.add_argument("--sim", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_eval_sim)

    s = sub.add_parser("optimize", parents=[common], help="search a strategy on the twin")
    s.add_argument("method", choices=("ega", "sac"))
    s.add_argument("--sim", required=True)
    s.add_argument("--weather", required=True)
    s.add_argument("--days", type=int, help="horizon in days (ega: whole weather series, sac: 14)")
    s.add_argument("--generations", type=int)
    s.add_argument("--steps", type=int, help="SAC environment steps")
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("bilevel", parents=[common], help="closed-loop run against the reference world")
    s.add_argument("--sim", required=True)
    s.add_argument("--data", help="dataset replayed during fine-tuning")
    s.add_argument("--weather", required=True)
    s.add_argument("--K1", type=int)
    s.add_argument("--K2", type=int)
    s.add_argument("--T", type=int)
    s.add_argument("--budget", type=int)
    s.add_argument("--shift", help="scale world parameters, e.g. p_max=0.7")
    s.set_defaults(func=cmd_bilevel)

    s = sub.add_parser("report", parents=[common], help="R2 table, economics table and curves")
    s.add_argument("--sim", required=True)
    s.add_argument("--data", required=True, help="held-out dataset for R2")
    s.add_argument("--control", nargs="+", required=True, help="control-group trajectory files")
    s.add_argument("--experimental", nargs="+", required=True, help="experimental-group trajectory files")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("replay", parents=[common], help="re-run a logged trajectory and compare its ledger")
    s.add_argument("--trajectory", required=True)
    s.set_defaults(func=cmd_replay)
    return p


VALIDATION_ERRORS = (DomainError, TrajectoryFormatError, NetError, FileNotFoundError, NotADirectoryError, KeyError)


def cli_dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (TrainingDiverged, SacDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
