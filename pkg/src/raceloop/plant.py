"""Kinematic single-track plant with position-dependent traction saturation.

The plant is the "real world" of the simulation: when the demanded lateral
acceleration ``v^2 tan(delta) / L`` exceeds the local grip the realized
steering is reduced to the saturating value (understeer), and longitudinal
commands are clipped to the local longitudinal grip.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import atan, copysign, cos, sin, tan

import numpy as np

from raceloop.errors import DomainError


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    theta: float
    delta: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.delta, self.v])


@dataclass(frozen=True)
class ControlInput:
    a: float
    delta_dot: float


@dataclass(frozen=True)
class CirclePatch:
    cx: float
    cy: float
    r: float
    scale: float

    def contains(self, x: float, y: float) -> bool:
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 <= self.r * self.r


@dataclass(frozen=True)
class PolygonPatch:
    vertices: tuple[tuple[float, float], ...]
    scale: float

    def contains(self, x: float, y: float) -> bool:
        inside = False
        pts = self.vertices
        j = len(pts) - 1
        for i in range(len(pts)):
            xi, yi = pts[i]
            xj, yj = pts[j]
            if (yi > y) != (yj > y) and x < (xj - xi) * (y - yi) / (yj - yi) + xi:
                inside = not inside
            j = i
        return inside


@dataclass(frozen=True)
class FrictionField:
    """Grip multiplier over the plane: ``base`` everywhere, lowered inside patches."""

    base: float = 1.0
    patches: tuple[CirclePatch | PolygonPatch, ...] = ()

    def __post_init__(self) -> None:
        if not self.base > 0 or any(not p.scale > 0 for p in self.patches):
            raise DomainError("friction scales must be positive")

    def mu(self, x: float, y: float) -> float:
        m = self.base
        for p in self.patches:
            if p.contains(x, y):
                m = min(m, self.base * p.scale)
        return m


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 0.33
    delta_max: float = 0.42
    delta_dot_max: float = 3.2
    a_cmd_max: float = 8.0
    a_par_physical: float = 4.4
    a_perp_physical: float = 5.5

    @classmethod
    def with_headroom(cls, a_par_nominal: float, a_perp_nominal: float, headroom: float = 1.1, **kw: float) -> "VehicleParams":
        """Physical grip ceilings ``headroom`` times the planner's nominal limits."""
        return cls(a_par_physical=headroom * a_par_nominal, a_perp_physical=headroom * a_perp_nominal, **kw)

    @property
    def kappa_max(self) -> float:
        return tan(self.delta_max) / self.wheelbase


def dynamics(state: np.ndarray, a: float, delta_dot: float, wheelbase: float) -> np.ndarray:
    """Right-hand side ``[v cos th, v sin th, v tan(d)/L, d_dot, a]``."""
    _, _, th, d, v = state
    return np.array([v * cos(th), v * sin(th), v * tan(d) / wheelbase, delta_dot, a])


def saturated_steer(delta: float, v: float, wheelbase: float, lat_cap: float) -> tuple[float, bool]:
    """Steering angle realized under a lateral acceleration cap."""
    demand = v * v * tan(delta) / wheelbase
    if abs(demand) <= lat_cap:
        return delta, False
    return copysign(atan(lat_cap * wheelbase / (v * v)), delta), True


def _rhs(x: list[float], a: float, dd: float, params: VehicleParams, lat_cap: float) -> tuple[list[float], bool]:
    th, d, v = x[2], x[3], x[4]
    d_eff, slip = saturated_steer(d, v, params.wheelbase, lat_cap)
    return [v * cos(th), v * sin(th), v * tan(d_eff) / params.wheelbase, dd, a], slip


@dataclass
class Plant:
    """Stateful simulator; every call to :meth:`step` advances ``dt`` seconds."""

    params: VehicleParams = field(default_factory=VehicleParams)
    friction: FrictionField = field(default_factory=FrictionField)

    def step(self, state: VehicleState, inp: ControlInput, dt: float) -> tuple[VehicleState, bool, float]:
        """RK4 step with traction limits evaluated at the start-of-step position.

        Returns ``(next_state, slipped, mu)``.
        """
        if not dt > 0:
            raise DomainError("dt must be positive")
        p = self.params
        mu = self.friction.mu(state.x, state.y)
        a_cap = mu * p.a_par_physical
        a = min(max(inp.a, -a_cap), a_cap)
        dd = min(max(inp.delta_dot, -p.delta_dot_max), p.delta_dot_max)
        lat_cap = mu * p.a_perp_physical
        x0 = [state.x, state.y, state.theta, state.delta, state.v]
        k1, s1 = _rhs(x0, a, dd, p, lat_cap)
        x1 = [x0[i] + 0.5 * dt * k1[i] for i in range(5)]
        k2, s2 = _rhs(x1, a, dd, p, lat_cap)
        x2 = [x0[i] + 0.5 * dt * k2[i] for i in range(5)]
        k3, s3 = _rhs(x2, a, dd, p, lat_cap)
        x3 = [x0[i] + dt * k3[i] for i in range(5)]
        k4, s4 = _rhs(x3, a, dd, p, lat_cap)
        xn = [x0[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(5)]
        xn[3] = min(max(xn[3], -p.delta_max), p.delta_max)
        xn[4] = max(xn[4], 0.0)
        slip = s1 or s2 or s3 or s4
        if abs(inp.a) > a_cap:
            slip = True
        return VehicleState(*xn), slip, mu


def rk4_step(state: np.ndarray, a: float, delta_dot: float, wheelbase: float, dt: float) -> np.ndarray:
    """Plain RK4 step of :func:`dynamics` (no saturation)."""
    k1 = dynamics(state, a, delta_dot, wheelbase)
    k2 = dynamics(state + 0.5 * dt * k1, a, delta_dot, wheelbase)
    k3 = dynamics(state + 0.5 * dt * k2, a, delta_dot, wheelbase)
    k4 = dynamics(state + dt * k3, a, delta_dot, wheelbase)
    return state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
