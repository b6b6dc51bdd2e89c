"""Command line entry point: ``raceloop <subcommand> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from raceloop.config import ExperimentConfig
from raceloop.constraint_map import ConstraintMap
from raceloop.errors import ConfigError, RacelineError
from raceloop.loop import BLAME_HEADER, LapLog, closed_loop, feedback_pass
from raceloop.nurbs import NurbsCurve, apply_closure
from raceloop.optimizer import initial_parameters, optimize_raceline
from raceloop.render import render_svg
from raceloop.timing import TimedTrajectory, min_lap_time_const, min_lap_time_spatial, sample_trajectory

log = logging.getLogger("raceloop")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes: dict[str, object] = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        changes["output_dir"] = str(args.out)
    if getattr(args, "laps", None) is not None:
        changes["laps"] = args.laps
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    if getattr(args, "no_feedback", False):
        cfg = dataclasses.replace(cfg, feedback_enabled_from_lap=cfg.laps)
    return cfg


def _read_map(path: str | None, cfg: ExperimentConfig) -> ConstraintMap:
    if path:
        try:
            return ConstraintMap.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read map {path}: {exc}") from exc
    return cfg.initial_map(cfg.track_model())


def cmd_optimize(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    track = cfg.track_model()
    cmap = _read_map(args.map, cfg)
    limits = cfg.dynamic_limits()
    budget = args.budget or cfg.initial_iterations
    init = initial_parameters(track, cfg.optimizer.n_ctrl)
    res = optimize_raceline(
        track, limits, cmap, cfg.objective_config(), budget,
        initial=init, sigma0=cfg.optimizer.sigma0, seed=cfg.seed, position_scale=cfg.optimizer.position_scale,
    )  # fmt: skip
    T = min_lap_time_spatial(res.curve, limits, cmap, cfg.trajectory_samples)
    T0 = min_lap_time_spatial(apply_closure(init), limits, cmap, cfg.trajectory_samples)
    out = Path(args.out or cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "curve.json").write_text(res.curve.dumps())
    (out / "trajectory.csv").write_text(sample_trajectory(res.curve, T, cfg.trajectory_samples).to_csv())
    (out / "optimizer_history.csv").write_text(res.result.history_csv())
    summary = {"lap_time": T, "centerline_lap_time": T0, "cost": res.cost.total, "evaluations": res.result.evaluations, "seed": cfg.seed}
    (out / "optimize.json").write_text(json.dumps(summary, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_loop(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    if not cfg.output_dir:
        raise ConfigError("loop needs an output directory (--out or output_dir)")
    result = closed_loop(cfg, keep_logs=False)
    sys.stdout.write(result.summary())
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    try:
        curve = NurbsCurve.loads(Path(args.curve).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read curve {args.curve}: {exc}") from exc
    limits = cfg.dynamic_limits()
    if args.map:
        T = min_lap_time_spatial(curve, limits, _read_map(args.map, cfg), cfg.trajectory_samples)
    else:
        T = min_lap_time_const(curve, limits, cfg.trajectory_samples)
    print(format(T, ".17g"))
    return EXIT_OK


def _lap_dir(run: Path, lap: int) -> Path:
    d = run / f"lap_{lap:03d}"
    if not d.is_dir():
        raise ConfigError(f"no artifacts for lap {lap} in {run}")
    return d


def cmd_render(args: argparse.Namespace) -> int:
    run = Path(args.run)
    cfg = ExperimentConfig.load(run / "config.json")
    track = cfg.track_model()
    d = _lap_dir(run, args.lap)
    traj = TimedTrajectory.from_csv((d / "trajectory.csv").read_text())
    cmap = ConstraintMap.loads((d / "map.txt").read_text())
    lap_log = LapLog.from_csv((d / "lap_log.csv").read_text()) if (d / "lap_log.csv").exists() else None
    svg = render_svg(track, traj, cmap, lap_log, deadband=cfg.feedback.deadband * cfg.dynamic_limits().a_par_nominal)
    target = Path(args.out) if args.out else d / "lap.svg"
    target.write_text(svg)
    print(target)
    return EXIT_OK


def cmd_replay_feedback(args: argparse.Namespace) -> int:
    """Re-run the map updates from stored lap logs, starting from the initial map."""
    run = Path(args.run)
    cfg = ExperimentConfig.load(run / "config.json")
    cmap = cfg.initial_map(cfg.track_model())
    a_par = cfg.dynamic_limits().a_par_nominal
    out = Path(args.out) if args.out else run / "replay"
    out.mkdir(parents=True, exist_ok=True)
    rows = [BLAME_HEADER]
    mismatches = 0
    for lap in range(cfg.laps):
        d = _lap_dir(run, lap)
        traj = TimedTrajectory.from_csv((d / "trajectory.csv").read_text())
        lap_log = LapLog.from_csv((d / "lap_log.csv").read_text())
        if lap >= cfg.feedback_enabled_from_lap:
            cmap, events, _ = feedback_pass(lap_log, traj, cmap, cfg.feedback, a_par, lap)
            rows.extend(ev.row() for ev in events)
        text = cmap.dumps()
        (out / f"map_{lap:03d}.txt").write_text(text)
        if (d / "map.txt").exists() and (d / "map.txt").read_text() != text:
            mismatches += 1
    (out / "blame_events.csv").write_text("\n".join(rows) + "\n")
    print(json.dumps({"laps": cfg.laps, "map_mismatches": mismatches}))
    return EXIT_OK if mismatches == 0 else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="raceloop", description="Closed-loop raceline optimization experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory or file")

    sp = sub.add_parser("optimize", help="static raceline for a track and map")
    common(sp)
    sp.add_argument("--map", help="constraint map text file (default: initial map)")
    sp.add_argument("--budget", type=int, help="objective evaluations (default: initial_iterations)")
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("loop", help="full closed-loop experiment")
    common(sp)
    sp.add_argument("--laps", type=int)
    sp.add_argument("--no-feedback", action="store_true", help="never update the map")
    sp.set_defaults(func=cmd_loop)

    sp = sub.add_parser("evaluate", help="lap time of a stored curve")
    common(sp)
    sp.add_argument("--curve", required=True, help="curve JSON written by optimize/loop")
    sp.add_argument("--map", help="constraint map (default: constant nominal limits)")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("render", help="SVG from stored lap artifacts")
    sp.add_argument("--run", required=True, help="run directory written by loop")
    sp.add_argument("--lap", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("replay-feedback", help="re-run the feedback pass on stored lap logs")
    sp.add_argument("--run", required=True, help="run directory written by loop")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_replay_feedback)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return int(args.func(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RacelineError, OSError, ValueError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
