"""Closed-loop driver: optimize -> drive a lap -> blame -> update map -> repeat."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from raceloop import cma
from raceloop.blame import (
    BlameRegion,
    SignZones,
    blame_region,
    circular_range,
    closest_point,
    fallback_transition,
    sign_zones,
    transition_index,
)
from raceloop.config import ExperimentConfig, FeedbackSettings
from raceloop.constraint_map import ConstraintMap, modulate_error
from raceloop.errors import NoTransitionError
from raceloop.mpc import TrackingMpc, initial_state
from raceloop.nurbs import FreeParameters, NurbsCurve
from raceloop.optimizer import initial_parameters, optimize_raceline
from raceloop.plant import Plant, VehicleState
from raceloop.timing import DynamicLimits, TimedTrajectory, min_lap_time_spatial, sample_trajectory
from raceloop.track import TrackModel

log = logging.getLogger(__name__)

LAP_LOG_COLUMNS = (
    "t", "x", "y", "theta", "delta", "v", "a_cmd", "delta_dot_cmd", "slip",
    "meas_x", "meas_y", "i_min", "u_min", "e_hat",
)  # fmt: skip
DEBOUNCE_STEPS = 5


@dataclass
class LapLog:
    """Per controller step records of one lap."""

    rows: NDArray[np.float64]
    duration: float
    aborted: bool
    abort_reason: str = ""

    def column(self, name: str) -> NDArray[np.float64]:
        return self.rows[:, LAP_LOG_COLUMNS.index(name)]

    @property
    def e_hat(self) -> NDArray[np.float64]:
        return self.column("e_hat")

    @property
    def i_min(self) -> NDArray[np.intp]:
        return self.column("i_min").astype(int)

    @property
    def positions(self) -> NDArray[np.float64]:
        return self.rows[:, 1:3]

    def __len__(self) -> int:
        return self.rows.shape[0]

    def to_csv(self) -> str:
        lines = [f"# duration={self.duration:.17g} aborted={int(self.aborted)} reason={self.abort_reason or '-'}"]
        lines.append(",".join(LAP_LOG_COLUMNS))
        for r in self.rows:
            vals = [format(x, ".17g") for x in r]
            for k in ("slip", "i_min"):
                j = LAP_LOG_COLUMNS.index(k)
                vals[j] = str(int(r[j]))
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "LapLog":
        lines = text.splitlines()
        head = dict(tok.split("=", 1) for tok in lines[0].lstrip("# ").split())
        rows = np.array([[float(x) for x in ln.split(",")] for ln in lines[2:] if ln.strip()])
        rows = rows.reshape(-1, len(LAP_LOG_COLUMNS))
        reason = head.get("reason", "-")
        return cls(rows, float(head["duration"]), bool(int(head["aborted"])), "" if reason == "-" else reason)


def run_lap(
    trajectory: TimedTrajectory,
    plant: Plant,
    controller: TrackingMpc,
    cmap: ConstraintMap | None = None,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
    dt_plant: float = 0.001,
    abort_threshold: float = 2.0,
    start: VehicleState | None = None,
) -> LapLog:
    """Drive one lap from the trajectory start until the closest-point parameter wraps past 1."""
    cfg = controller.config
    substeps = max(1, int(round(cfg.dt / dt_plant)))
    dt_plant = cfg.dt / substeps
    rng = rng if rng is not None else np.random.default_rng(0)
    vp = plant.params
    state = start or initial_state(trajectory, vp.wheelbase, vp.delta_max)
    controller.reset()
    T = trajectory.lap_time
    n = trajectory.n_samples
    window = max(16, n // 8)
    t_limit = 3.0 * T + 5.0

    rows: list[list[float]] = []
    hint: int | None = None
    progress: float | None = None
    crossing: tuple[int, float] | None = None
    t = 0.0
    aborted, reason = False, ""
    duration = 0.0
    step = 0
    while True:
        noise = rng.normal(0.0, noise_sigma, 2) if noise_sigma > 0 else np.zeros(2)
        meas = np.array([state.x, state.y]) + noise
        i_min, u_min, e_hat = closest_point(trajectory, meas, hint, window if hint is not None else None)
        hint = i_min
        if progress is None:
            progress = u_min - 1.0 if u_min > 0.5 else u_min
            prev_progress, prev_t = progress, t
        else:
            prev_progress = progress
            progress += (u_min - (progress % 1.0) + 0.5) % 1.0 - 0.5

        if crossing is None and progress >= 1.0:
            frac = (1.0 - prev_progress) / max(progress - prev_progress, 1e-12)
            crossing = (len(rows), prev_t + frac * (t - prev_t))
        elif crossing is not None and progress < 1.0:
            crossing = None
        if crossing is not None and len(rows) - crossing[0] >= DEBOUNCE_STEPS:
            duration = crossing[1]
            rows = rows[: crossing[0]]
            break

        if e_hat > abort_threshold:
            aborted, reason = True, "tracking error"
        elif cmap is not None and not bool(cmap.contains(np.array([state.x, state.y]))[0]):
            aborted, reason = True, "left map"
        elif t > t_limit:
            aborted, reason = True, "timeout"
        if aborted:
            duration = t
            break

        sol = controller.control(state, trajectory, u_min * T)
        cmd = sol.command
        slipped = False
        row_state = state
        for _ in range(substeps):
            state, s, _ = plant.step(state, cmd, dt_plant)
            slipped = slipped or s
        rows.append(
            [t, row_state.x, row_state.y, row_state.theta, row_state.delta, row_state.v,
             cmd.a, cmd.delta_dot, float(slipped), meas[0], meas[1], float(i_min), u_min, e_hat]
        )  # fmt: skip
        prev_t = t
        step += 1
        t = step * cfg.dt
    arr = np.array(rows, dtype=float).reshape(-1, len(LAP_LOG_COLUMNS))
    return LapLog(arr, float(duration), aborted, reason)


@dataclass(frozen=True)
class BlameEvent:
    lap: int
    step: int
    i_min: int
    i_transition: int
    e_hat: float
    e: float

    def row(self) -> str:
        return f"{self.lap},{self.step},{self.i_min},{self.i_transition},{self.e_hat:.17g},{self.e:.17g}"


BLAME_HEADER = "lap,step,i_min,i_transition,e_hat,e"


def _zone_start(zones: SignZones, i_min: int) -> int:
    try:
        return transition_index(zones.Z, i_min)
    except NoTransitionError:
        return fallback_transition(i_min, zones.n_samples)


def feedback_pass(
    lap_log: LapLog,
    trajectory: TimedTrajectory,
    cmap: ConstraintMap,
    settings: FeedbackSettings,
    a_par_nominal: float,
    lap: int = 0,
) -> tuple[ConstraintMap, list[BlameEvent], list[BlameRegion]]:
    """Turn one lap's tracking errors into a single map update.

    Every traversed acceleration zone contributes one blame region: the step
    with the largest error in the zone decides the signal.  A negative
    signal covers the zone from its transition up to that step; a positive
    one covers everything driven in the zone.
    """
    if len(lap_log) == 0:
        return cmap, [], []
    cfg = settings.feedback_config()
    zones = sign_zones(trajectory.a_par, settings.deadband * a_par_nominal)
    n = trajectory.n_samples
    i_mins = lap_log.i_min
    e_hats = lap_log.e_hat
    zone_ids = zones.zone_of(i_mins)
    floor = settings.reporting_floor * cfg.e_th

    cap = settings.e_hat_cap if settings.e_hat_cap is not None else np.inf

    def signal(e_hat: float) -> float:
        return modulate_error(min(e_hat, cap), cfg)

    def abort_signal(e_hat: float) -> float:
        return settings.abort_gain * cfg.w_minus * min(max(e_hat, cfg.e_th), cap)

    last = len(lap_log) - 1
    events: list[BlameEvent] = []
    regions: list[BlameRegion] = []
    for zid in sorted(set(int(z) for z in zone_ids)):
        steps = np.nonzero(zone_ids == zid)[0]
        k = int(steps[np.argmax(e_hats[steps])])
        if lap_log.aborted and last in steps:
            k = last
        e_hat = float(e_hats[k])
        i_min = int(i_mins[k])
        if lap_log.aborted and k == last:
            e = abort_signal(e_hat)
        else:
            e = signal(e_hat)
            if e >= 0:
                # good tracking: credit the whole stretch driven in this zone
                progress = (i_mins[steps] - i_mins[steps[0]]) % n
                i_min = int(i_mins[steps[int(np.argmax(progress))]])
        i_tr = _zone_start(zones, i_min)
        regions.append(blame_region(trajectory, i_tr, i_min, e))
        if e_hat >= floor or e < 0:
            events.append(BlameEvent(lap, k, i_min, i_tr, e_hat, e))

    pts = np.vstack([r.positions for r in regions])
    errs = np.concatenate([np.full(len(r), r.e) for r in regions])
    # negative signals first so they win ties in the nearest-point assignment
    order = np.argsort(errs, kind="stable")
    new_map = cmap.apply_blame(pts[order], errs[order], cfg.blame_radius)
    return new_map, events, regions


@dataclass
class LapResult:
    lap: int
    planned_time: float
    executed_time: float
    max_error: float
    mean_error: float
    blame_events: int
    aborted: bool
    feedback: bool
    objective: float
    evaluations: int
    map_mean_visited: float
    map_snapshot: str = ""

    def to_json(self) -> str:
        d = dict(self.__dict__)
        for k, v in d.items():
            if isinstance(v, float):
                d[k] = float(format(v, ".17g"))
        return json.dumps(d, sort_keys=True)


@dataclass
class LoopResult:
    laps: list[LapResult]
    cmap: ConstraintMap
    trajectory: TimedTrajectory
    params: FreeParameters
    events: list[BlameEvent] = field(default_factory=list)
    lap_logs: list[LapLog] = field(default_factory=list)
    trajectories: list[TimedTrajectory] = field(default_factory=list)
    maps: list[ConstraintMap] = field(default_factory=list)

    def summary(self) -> str:
        return "\n".join(r.to_json() for r in self.laps) + "\n"


def map_mean_visited(cmap: ConstraintMap) -> float:
    mask = cmap.visited()
    return float(cmap.M[mask].mean()) if mask.any() else float(cmap.M.mean())


def closed_loop(config: ExperimentConfig, keep_logs: bool = True) -> LoopResult:
    """Alternate optimization and driving for ``config.laps`` laps."""
    config.validate()
    track = config.track_model()
    limits = config.dynamic_limits()
    vp = config.vehicle_params()
    plant = Plant(vp, config.friction_field())
    controller = TrackingMpc(config.mpc_config(), vp.wheelbase)
    obj_cfg = config.objective_config()
    cmap = config.initial_map(track)
    ocfg = config.optimizer
    params = initial_parameters(track, ocfg.n_ctrl)
    state: cma.CmaState | None = None
    out = Path(config.output_dir) if config.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(config.dumps())
        (out / "track.csv").write_text(track.to_csv())

    results: list[LapResult] = []
    events: list[BlameEvent] = []
    logs: list[LapLog] = []
    trajs: list[TimedTrajectory] = []
    maps: list[ConstraintMap] = []
    traj: TimedTrajectory | None = None
    for lap in range(config.laps):
        budget = config.initial_iterations if lap == 0 else config.iterations_per_lap
        if state is not None:
            state = state.restarted(ocfg.sigma_restart)
        static = optimize_raceline(
            track, limits, cmap, obj_cfg, budget,
            initial=params, sigma0=ocfg.sigma0, seed=config.seed, state=state,
            position_scale=ocfg.position_scale,
        )  # fmt: skip
        params, state = static.params, static.result.state
        curve = static.curve
        T = min_lap_time_spatial(curve, limits, cmap, config.trajectory_samples)
        traj = sample_trajectory(curve, T, config.trajectory_samples)
        rng = np.random.default_rng([config.seed, lap])
        lap_log = run_lap(
            traj, plant, controller, cmap, config.vehicle.noise_sigma, rng,
            abort_threshold=config.feedback.abort_threshold,
        )  # fmt: skip
        feedback_on = lap >= config.feedback_enabled_from_lap
        lap_events: list[BlameEvent] = []
        regions: list[BlameRegion] = []
        if feedback_on:
            cmap, lap_events, regions = feedback_pass(lap_log, traj, cmap, config.feedback, limits.a_par_nominal, lap)
        events.extend(lap_events)
        e = lap_log.e_hat
        res = LapResult(
            lap=lap,
            planned_time=T,
            executed_time=lap_log.duration,
            max_error=float(e.max()) if e.size else 0.0,
            mean_error=float(e.mean()) if e.size else 0.0,
            blame_events=len(lap_events),
            aborted=lap_log.aborted,
            feedback=feedback_on,
            objective=static.cost.total,
            evaluations=static.result.evaluations,
            map_mean_visited=map_mean_visited(cmap),
        )
        log.info(
            "lap %d: T=%.3f exec=%.3f max_e=%.3f events=%d aborted=%s map=%.3f",
            lap, T, res.executed_time, res.max_error, res.blame_events, res.aborted, res.map_mean_visited,
        )  # fmt: skip
        if out is not None:
            _persist_lap(out, lap, curve, traj, cmap, lap_log, lap_events, track, regions, static.result)
            res.map_snapshot = f"lap_{lap:03d}/map.txt"
        results.append(res)
        if keep_logs:
            logs.append(lap_log)
            trajs.append(traj)
            maps.append(cmap)
    assert traj is not None
    loop = LoopResult(results, cmap, traj, params, events, logs, trajs, maps)
    if out is not None:
        (out / "results.jsonl").write_text(loop.summary())
        (out / "blame_events.csv").write_text(BLAME_HEADER + "\n" + "".join(ev.row() + "\n" for ev in events))
        (out / "final_map.txt").write_text(cmap.dumps())
    return loop


def _persist_lap(
    out: Path,
    lap: int,
    curve: NurbsCurve,
    traj: TimedTrajectory,
    cmap: ConstraintMap,
    lap_log: LapLog,
    events: list[BlameEvent],
    track: TrackModel,
    regions: list[BlameRegion],
    opt: cma.OptimizeResult,
) -> None:
    from raceloop.render import render_svg

    d = out / f"lap_{lap:03d}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "curve.json").write_text(curve.dumps())
    (d / "trajectory.csv").write_text(traj.to_csv())
    (d / "map.txt").write_text(cmap.dumps())
    (d / "lap_log.csv").write_text(lap_log.to_csv())
    (d / "blame_events.csv").write_text(BLAME_HEADER + "\n" + "".join(ev.row() + "\n" for ev in events))
    (d / "optimizer_history.csv").write_text(opt.history_csv())
    (d / "lap.svg").write_text(render_svg(track, traj, cmap, lap_log, regions))


def evaluate_trajectory(curve: NurbsCurve, limits: DynamicLimits, cmap: ConstraintMap, n_samples: int = 2048) -> float:
    """Lap time of a stored curve under the given limits and map."""
    return min_lap_time_spatial(curve, limits, cmap, n_samples)


__all__ = [
    "BlameEvent",
    "LapLog",
    "LapResult",
    "LoopResult",
    "closed_loop",
    "feedback_pass",
    "run_lap",
    "circular_range",
]
