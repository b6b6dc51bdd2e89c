"""Raceline objective over the reduced NURBS parameters and its CMA-ES driver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from raceloop import cma
from raceloop.constraint_map import ConstraintMap
from raceloop.errors import RacelineError
from raceloop.nurbs import FreeParameters, NurbsCurve, apply_closure, fit_centerline
from raceloop.timing import DynamicLimits, lap_time_from_kinematics, parametric_kinematics, uniform_grid
from raceloop.track import TrackModel

# Cost assigned to parameter vectors that do not decode to a usable curve.
INVALID_COST = 1e6


@dataclass(frozen=True)
class ObjectiveConfig:
    lambda_dist: float = 50.0
    lambda_curv: float = 10.0
    kappa_max: float = 1.35
    n_samples: int = 2048

    def __post_init__(self) -> None:
        if self.lambda_dist < 0 or self.lambda_curv < 0 or not self.kappa_max > 0 or self.n_samples < 16:
            raise ValueError("invalid objective configuration")


@dataclass(frozen=True)
class CostBreakdown:
    lap_time: float
    phi_distance: float
    phi_curvature: float
    total: float


def curvature_penalty(kappa: NDArray[np.float64], kappa_max: float) -> float:
    """Mean of ``max(0, |kappa| - kappa_max)^2`` over a uniform periodic grid."""
    return float(np.mean(np.maximum(0.0, np.abs(kappa) - kappa_max) ** 2))


def distance_penalty(excess: NDArray[np.float64]) -> float:
    """Mean squared excess beyond the track boundary."""
    return float(np.mean(np.maximum(0.0, excess) ** 2))


def evaluate_curve(
    curve: NurbsCurve,
    track: TrackModel,
    limits: DynamicLimits,
    cmap: ConstraintMap | None,
    cfg: ObjectiveConfig,
) -> CostBreakdown:
    u = uniform_grid(cfg.n_samples)
    kin = parametric_kinematics(curve, u)
    scale = 1.0 if cmap is None else cmap.lookup(kin.position, u=u)
    T = lap_time_from_kinematics(kin, limits, scale)
    phi_d = distance_penalty(track.boundary_excess(kin.position))
    phi_c = curvature_penalty(kin.kappa, cfg.kappa_max)
    total = T + cfg.lambda_dist * phi_d + cfg.lambda_curv * phi_c
    return CostBreakdown(T, phi_d, phi_c, total)


@dataclass
class RacelineObjective:
    """Callable cost ``T + lambda_dist Phi_dist + lambda_curv Phi_curv`` of an encoded parameter vector."""

    track: TrackModel
    limits: DynamicLimits
    cmap: ConstraintMap | None
    config: ObjectiveConfig
    n: int
    position_scale: float = 1.0

    def decode(self, theta: ArrayLike) -> FreeParameters:
        return FreeParameters.from_vector(theta, self.n, self.position_scale)

    def encode(self, params: FreeParameters) -> NDArray[np.float64]:
        return params.to_vector(self.position_scale)

    def curve(self, theta: ArrayLike) -> NurbsCurve:
        return apply_closure(self.decode(theta))

    def breakdown(self, theta: ArrayLike) -> CostBreakdown:
        return evaluate_curve(self.curve(theta), self.track, self.limits, self.cmap, self.config)

    def __call__(self, theta: ArrayLike) -> float:
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            return INVALID_COST
        try:
            with np.errstate(all="ignore"):
                cost = self.breakdown(theta).total
        except (RacelineError, FloatingPointError, ZeroDivisionError):
            return INVALID_COST
        return cost if np.isfinite(cost) else INVALID_COST


def objective(
    theta: FreeParameters,
    track: TrackModel,
    limits: DynamicLimits,
    cmap: ConstraintMap | None,
    cfg: ObjectiveConfig,
) -> float:
    """Cost of a free-parameter set; invalid curves get :data:`INVALID_COST`."""
    f = RacelineObjective(track, limits, cmap, cfg, theta.n)
    return f(f.encode(theta))


# Fitting passes for the starting curve; a loose fit is enough to seed the search.
SEED_FIT_ITERATIONS = 12


def initial_parameters(track: TrackModel, n_ctrl: int = 17) -> FreeParameters:
    """Closed fit of the track centerline (the optimizer's starting point)."""
    pts = track.centerline
    stride = max(1, len(pts) // (8 * n_ctrl))
    return fit_centerline(pts[::stride], n_ctrl, iterations=SEED_FIT_ITERATIONS, refine=False).params


@dataclass
class StaticResult:
    params: FreeParameters
    curve: NurbsCurve
    cost: CostBreakdown
    result: cma.OptimizeResult


def optimize_raceline(
    track: TrackModel,
    limits: DynamicLimits,
    cmap: ConstraintMap | None,
    cfg: ObjectiveConfig,
    budget: int,
    initial: FreeParameters | None = None,
    n_ctrl: int = 17,
    sigma0: float = 0.1,
    seed: int = 0,
    state: cma.CmaState | None = None,
    position_scale: float = 1.0,
    map_fn: cma.MapFn = map,
) -> StaticResult:
    """CMA-ES search starting from ``initial`` (centerline fit by default)."""
    if initial is None:
        initial = initial_parameters(track, n_ctrl)
    f = RacelineObjective(track, limits, cmap, cfg, initial.n, position_scale)
    res = cma.optimize(f, f.encode(initial), budget, sigma0=sigma0, seed=seed, state=state, map_fn=map_fn)
    params = f.decode(res.best_x)
    curve = apply_closure(params)
    return StaticResult(params, curve, f.breakdown(res.best_x), res)
