"""Experiment configuration (JSON) and factories for the loop components."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from raceloop.constraint_map import ConstraintMap, FeedbackConfig
from raceloop.errors import ConfigError
from raceloop.mpc import MpcConfig
from raceloop.optimizer import ObjectiveConfig
from raceloop.plant import CirclePatch, FrictionField, PolygonPatch, VehicleParams
from raceloop.timing import DynamicLimits
from raceloop.track import TrackModel, resolve_track


@dataclass
class VehicleConfig:
    headroom: float = 1.1
    wheelbase: float = 0.33
    delta_max: float = 0.42
    delta_dot_max: float = 3.2
    a_cmd_max: float = 8.0
    noise_sigma: float = 0.005


@dataclass
class MapConfig:
    resolution: float = 0.25
    margin: float = 1.0
    m_init: float = 1.0
    v_init: float = 1.0
    R: float = 0.5
    Q: float = 0.01
    m_min: float = 0.05
    m_max: float = 2.0


@dataclass
class FeedbackSettings:
    e_th: float = 0.1
    w_plus: float = 4.0
    w_minus: float = -1.5
    blame_radius: float = 0.5
    reporting_floor: float = 0.2
    deadband: float = 0.05
    abort_gain: float = 2.0
    abort_threshold: float = 2.0
    # errors above this are treated as this large when forming the update signal
    e_hat_cap: float | None = 0.3

    def feedback_config(self) -> FeedbackConfig:
        return FeedbackConfig(self.e_th, self.w_plus, self.w_minus, self.blame_radius)


@dataclass
class OptimizerConfig:
    n_ctrl: int = 17
    sigma0: float = 0.1
    sigma_restart: float = 2.0
    position_scale: float = 1.0
    exploration: bool = False


@dataclass
class ExperimentConfig:
    track: str = "oval"
    friction: dict[str, Any] = field(default_factory=lambda: {"base": 1.0, "patches": []})
    limits: dict[str, float] = field(default_factory=lambda: {"v_max": 8.0, "a_par_nominal": 4.0, "a_perp_nominal": 5.0})
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    feedback: FeedbackSettings = field(default_factory=FeedbackSettings)
    map: MapConfig = field(default_factory=MapConfig)
    mpc: dict[str, Any] = field(default_factory=dict)
    objective: dict[str, Any] = field(default_factory=dict)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    laps: int = 10
    iterations_per_lap: int = 500
    initial_iterations: int = 4000
    feedback_enabled_from_lap: int = 0
    trajectory_samples: int = 2048
    seed: int = 0
    output_dir: str | None = None
    base_dir: str | None = None

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.laps < 1:
            raise ConfigError("laps must be >= 1")
        if self.iterations_per_lap < 1 or self.initial_iterations < 1:
            raise ConfigError("iterations per lap must be >= 1")
        if self.trajectory_samples < 512:
            raise ConfigError("trajectory_samples must be >= 512")
        if self.optimizer.exploration:
            raise ConfigError("exploration is not implemented; leave optimizer.exploration false")

    # -- factories -------------------------------------------------------
    def dynamic_limits(self) -> DynamicLimits:
        try:
            return DynamicLimits(**self.limits)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad limits: {exc}") from exc

    def vehicle_params(self) -> VehicleParams:
        lim = self.dynamic_limits()
        v = self.vehicle
        return VehicleParams.with_headroom(
            lim.a_par_nominal,
            lim.a_perp_nominal,
            v.headroom,
            wheelbase=v.wheelbase,
            delta_max=v.delta_max,
            delta_dot_max=v.delta_dot_max,
            a_cmd_max=v.a_cmd_max,
        )

    def friction_field(self) -> FrictionField:
        fr = self.friction
        patches: list[CirclePatch | PolygonPatch] = []
        for p in fr.get("patches", []):
            kind = p.get("type", "circle")
            if kind == "circle":
                patches.append(CirclePatch(float(p["cx"]), float(p["cy"]), float(p["r"]), float(p["scale"])))
            elif kind == "polygon":
                patches.append(PolygonPatch(tuple((float(x), float(y)) for x, y in p["vertices"]), float(p["scale"])))
            else:
                raise ConfigError(f"unknown patch type {kind!r}")
        return FrictionField(float(fr.get("base", 1.0)), tuple(patches))

    def track_model(self) -> TrackModel:
        return resolve_track(self.track, Path(self.base_dir) if self.base_dir else None)

    def initial_map(self, track: TrackModel) -> ConstraintMap:
        m = self.map
        return ConstraintMap.covering(
            track.bounds(m.margin), m.resolution, m_init=m.m_init, v_init=m.v_init, R=m.R, Q=m.Q, m_min=m.m_min, m_max=m.m_max
        )

    def mpc_config(self) -> MpcConfig:
        return MpcConfig.for_vehicle(self.vehicle_params(), **self.mpc)

    def objective_config(self) -> ObjectiveConfig:
        kw = dict(self.objective)
        kw.setdefault("kappa_max", self.vehicle_params().kappa_max)
        return ObjectiveConfig(**kw)

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        nested = {
            "vehicle": VehicleConfig,
            "feedback": FeedbackSettings,
            "map": MapConfig,
            "optimizer": OptimizerConfig,
        }
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw: dict[str, Any] = {}
        try:
            for key, value in data.items():
                if key in nested and isinstance(value, dict):
                    kw[key] = nested[key](**value)
                else:
                    kw[key] = value
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        data.setdefault("base_dir", str(path.parent.resolve()))
        return cls.from_dict(data)
