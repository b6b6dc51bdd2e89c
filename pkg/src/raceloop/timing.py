"""Time scaling of a geometric curve: kinematics and minimum feasible lap time.

A curve ``c(u)`` driven with ``u = t / T`` has velocity ``c'(u) / T`` and
acceleration ``c''(u) / T**2``, so every kinematic quantity is the ``T = 1``
value scaled by a power of ``1 / T``.  The smallest admissible ``T`` is the
largest ratio over the sample grid.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import NDArray

from raceloop.errors import DomainError, SingularityError
from raceloop.nurbs import EPS_SPEED, NurbsCurve

if TYPE_CHECKING:
    from raceloop.constraint_map import ConstraintMap

DEFAULT_SAMPLES = 2048


@dataclass(frozen=True)
class DynamicLimits:
    v_max: float
    a_par_nominal: float
    a_perp_nominal: float

    def __post_init__(self) -> None:
        if not (self.v_max > 0 and self.a_par_nominal > 0 and self.a_perp_nominal > 0):
            raise DomainError("dynamic limits must be strictly positive")


@dataclass(frozen=True)
class ParametricKinematics:
    """Kinematics at ``T = 1`` on a grid of curve parameters."""

    u: NDArray[np.float64]
    position: NDArray[np.float64]
    speed: NDArray[np.float64]
    a_par: NDArray[np.float64]
    a_perp: NDArray[np.float64]
    kappa: NDArray[np.float64]
    heading: NDArray[np.float64]


def uniform_grid(n_samples: int) -> NDArray[np.float64]:
    return np.arange(n_samples, dtype=float) / n_samples


def parametric_kinematics(curve: NurbsCurve, u: NDArray[np.float64]) -> ParametricKinematics:
    """Speed and tangential/normal acceleration of the curve for ``T = 1``.

    Tangential part is ``c'.c'' / |c'|`` and normal part ``c' x c'' / |c'|``
    (positive to the left of the direction of travel).
    """
    u = np.asarray(u, dtype=float)
    d = curve.derivatives(u, 2)
    d1, d2 = d[1], d[2]
    speed = np.hypot(d1[:, 0], d1[:, 1])
    bad = speed <= EPS_SPEED
    if np.any(bad):
        raise SingularityError("degenerate tangent", float(u[np.argmax(bad)]))
    dot = d1[:, 0] * d2[:, 0] + d1[:, 1] * d2[:, 1]
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    return ParametricKinematics(
        u=u,
        position=d[0],
        speed=speed,
        a_par=dot / speed,
        a_perp=cross / speed,
        kappa=cross / speed**3,
        heading=np.arctan2(d1[:, 1], d1[:, 0]),
    )


def kinematics_at(curve: NurbsCurve, u_val: float, T: float) -> tuple[float, float, float]:
    """Return ``(v, a_par, a_perp)`` at ``u_val`` for lap time ``T``."""
    if not T > 0:
        raise DomainError(f"lap time must be positive, got {T}")
    k = parametric_kinematics(curve, np.array([u_val], dtype=float))
    return float(k.speed[0] / T), float(k.a_par[0] / T**2), float(k.a_perp[0] / T**2)


def lap_time_from_kinematics(
    kin: ParametricKinematics,
    limits: DynamicLimits,
    scale: NDArray[np.float64] | float = 1.0,
) -> float:
    """Max-ratio lap time; ``scale`` multiplies both acceleration limits per sample."""
    t_v = kin.speed / limits.v_max
    t_par = np.sqrt(np.abs(kin.a_par) / (scale * limits.a_par_nominal))
    t_perp = np.sqrt(np.abs(kin.a_perp) / (scale * limits.a_perp_nominal))
    T = float(max(t_v.max(), t_par.max(), t_perp.max()))
    if not T > 0:
        raise DomainError("curve has zero length")
    return T


def min_lap_time_const(curve: NurbsCurve, limits: DynamicLimits, n_samples: int = DEFAULT_SAMPLES) -> float:
    """Shortest lap time meeting constant speed and acceleration limits."""
    return lap_time_from_kinematics(parametric_kinematics(curve, uniform_grid(n_samples)), limits)


def min_lap_time_spatial(
    curve: NurbsCurve,
    limits: DynamicLimits,
    cmap: "ConstraintMap",
    n_samples: int = DEFAULT_SAMPLES,
) -> float:
    """Shortest lap time with acceleration limits scaled by the map at each sample."""
    kin = parametric_kinematics(curve, uniform_grid(n_samples))
    scale = cmap.lookup(kin.position, u=kin.u)
    return lap_time_from_kinematics(kin, limits, scale)


def constraint_ratios(
    kin: ParametricKinematics, limits: DynamicLimits, T: float, scale: NDArray[np.float64] | float = 1.0
) -> NDArray[np.float64]:
    """Per-sample ratios (velocity, longitudinal, lateral) of demand to limit at lap time ``T``."""
    return np.stack(
        [
            kin.speed / T / limits.v_max,
            np.abs(kin.a_par) / T**2 / (scale * limits.a_par_nominal),
            np.abs(kin.a_perp) / T**2 / (scale * limits.a_perp_nominal),
        ]
    )


@dataclass(frozen=True, eq=False)
class TimedTrajectory:
    """Dense uniform-``u`` samples of a curve driven with lap time ``T``."""

    lap_time: float
    u: NDArray[np.float64]
    position: NDArray[np.float64]
    v: NDArray[np.float64]
    a_par: NDArray[np.float64]
    a_perp: NDArray[np.float64]
    kappa: NDArray[np.float64]
    heading: NDArray[np.float64]
    curve: NurbsCurve | None = None

    @property
    def n_samples(self) -> int:
        return self.u.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# T={self.lap_time:.17g} N={self.n_samples}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u", "x", "y", "v", "a_par", "a_perp", "kappa"])
        for i in range(self.n_samples):
            w.writerow(
                [
                    format(x, ".17g")
                    for x in (
                        self.u[i],
                        self.position[i, 0],
                        self.position[i, 1],
                        self.v[i],
                        self.a_par[i],
                        self.a_perp[i],
                        self.kappa[i],
                    )
                ]
            )
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TimedTrajectory":
        lines = text.splitlines()
        header = dict(tok.split("=") for tok in lines[0].lstrip("# ").split())
        rows = np.array([[float(x) for x in r] for r in csv.reader(lines[2:]) if r])
        u, x, y, v, ap, an, k = rows.T
        pos = np.c_[x, y]
        # heading is recovered from the sampled positions (central differences)
        d = np.roll(pos, -1, axis=0) - np.roll(pos, 1, axis=0)
        return cls(float(header["T"]), u, pos, v, ap, an, k, np.arctan2(d[:, 1], d[:, 0]))


def sample_trajectory(curve: NurbsCurve, T: float, n_samples: int = DEFAULT_SAMPLES) -> TimedTrajectory:
    """Sample ``n_samples`` uniform parameters in ``[0, 1)`` with kinematics at lap time ``T``."""
    if not T > 0:
        raise DomainError(f"lap time must be positive, got {T}")
    kin = parametric_kinematics(curve, uniform_grid(n_samples))
    return TimedTrajectory(
        lap_time=float(T),
        u=kin.u,
        position=kin.position,
        v=kin.speed / T,
        a_par=kin.a_par / T**2,
        a_perp=kin.a_perp / T**2,
        kappa=kin.kappa,
        heading=kin.heading,
        curve=curve,
    )
