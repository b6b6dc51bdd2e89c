"""Trajectory-tracking MPC on the kinematic single-track model.

The controller follows the time-indexed reference (position, heading,
speed) with a feedforward-relative input penalty.  Each solve runs a few
Gauss-Newton iterations on the input sequence; each step is box-constrained
and is accepted only if it lowers the nonlinear cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import atan

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import lsq_linear

from raceloop.errors import DomainError
from raceloop.plant import ControlInput, VehicleParams, VehicleState
from raceloop.timing import TimedTrajectory


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 20
    dt: float = 0.02
    w_pos: float = 10.0
    w_heading: float = 1.0
    w_speed: float = 1.0
    w_accel: float = 0.1
    w_steer_rate: float = 0.1
    terminal_scale: float = 5.0
    a_max: float = 8.0
    delta_dot_max: float = 3.2
    max_iter: int = 4
    tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.horizon < 5:
            raise DomainError("horizon must be at least 5 steps")
        weights = (self.w_pos, self.w_heading, self.w_speed, self.w_accel, self.w_steer_rate, self.terminal_scale)
        if any(w < 0 for w in weights) or not self.dt > 0:
            raise DomainError("weights must be nonnegative and dt positive")

    @classmethod
    def for_vehicle(cls, params: VehicleParams, **kw) -> "MpcConfig":
        kw.setdefault("a_max", params.a_cmd_max)
        kw.setdefault("delta_dot_max", params.delta_dot_max)
        return cls(**kw)


@dataclass(frozen=True, eq=False)
class ReferenceWindow:
    t: NDArray[np.float64]
    u: NDArray[np.float64]
    position: NDArray[np.float64]
    heading: NDArray[np.float64]
    speed: NDArray[np.float64]
    a_ff: NDArray[np.float64]
    steer_ff: NDArray[np.float64]
    steer_rate_ff: NDArray[np.float64]


def _interp_periodic(values: NDArray[np.float64], idx: NDArray[np.float64]) -> NDArray[np.float64]:
    n = values.shape[0]
    i0 = np.floor(idx).astype(int) % n
    f = idx - np.floor(idx)
    i1 = (i0 + 1) % n
    if values.ndim == 2:
        f = f[:, None]
    return values[i0] * (1 - f) + values[i1] * f


def _interp_angle(theta: NDArray[np.float64], idx: NDArray[np.float64]) -> NDArray[np.float64]:
    n = theta.shape[0]
    i0 = np.floor(idx).astype(int) % n
    f = idx - np.floor(idx)
    i1 = (i0 + 1) % n
    d = np.angle(np.exp(1j * (theta[i1] - theta[i0])))
    return theta[i0] + f * d


def reference_window(trajectory: TimedTrajectory, t_now: float, horizon: int, dt: float, wheelbase: float = 0.33) -> ReferenceWindow:
    """Reference samples at ``t_now + k dt`` for ``k = 0 .. horizon-1``, wrapped modulo the lap time."""
    T = trajectory.lap_time
    t = t_now + dt * np.arange(horizon)
    u = np.mod(t / T, 1.0)
    idx = u * trajectory.n_samples
    pos = _interp_periodic(trajectory.position, idx)
    heading = np.unwrap(_interp_angle(trajectory.heading, idx))
    speed = _interp_periodic(trajectory.v, idx)
    a_ff = _interp_periodic(trajectory.a_par, idx)
    kappa = _interp_periodic(trajectory.kappa, idx)
    steer = np.arctan(wheelbase * kappa)
    # d(steer)/dt along the reference, from the next sample in time
    kappa_next = _interp_periodic(trajectory.kappa, np.mod((t + dt) / T, 1.0) * trajectory.n_samples)
    steer_rate = (np.arctan(wheelbase * kappa_next) - steer) / dt
    return ReferenceWindow(t, u, pos, heading, speed, a_ff, steer, steer_rate)


@dataclass
class MpcSolution:
    command: ControlInput
    inputs: NDArray[np.float64]
    predicted: NDArray[np.float64]
    cost_history: list[float]
    converged: bool


def _rollout(x0: NDArray[np.float64], U: NDArray[np.float64], dt: float, L: float) -> NDArray[np.float64]:
    H = U.shape[0]
    X = np.empty((H + 1, 5))
    X[0] = x0
    for k in range(H):
        x, y, th, d, v = X[k]
        X[k + 1] = (
            x + dt * v * np.cos(th),
            y + dt * v * np.sin(th),
            th + dt * v * np.tan(d) / L,
            d + dt * U[k, 1],
            v + dt * U[k, 0],
        )
    return X


@dataclass
class TrackingMpc:
    """Receding-horizon tracker with a warm-start buffer (one instance per simulation)."""

    config: MpcConfig = field(default_factory=MpcConfig)
    wheelbase: float = 0.33
    _warm: NDArray[np.float64] | None = field(default=None, repr=False)

    def reset(self) -> None:
        self._warm = None

    def _weights(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        c = self.config
        H = c.horizon
        s = np.ones(H)
        s[-1] = c.terminal_scale
        state_w = np.sqrt(np.outer(s, [c.w_pos, c.w_pos, c.w_heading, c.w_speed]))
        input_w = np.sqrt(np.array([c.w_accel, c.w_steer_rate]))
        return state_w, input_w

    def _residuals(self, X: NDArray[np.float64], U: NDArray[np.float64], ref: ReferenceWindow, sw, iw) -> NDArray[np.float64]:
        ex = X[1:, 0] - ref.position[:, 0]
        ey = X[1:, 1] - ref.position[:, 1]
        eth = np.angle(np.exp(1j * (X[1:, 2] - ref.heading)))
        ev = X[1:, 4] - ref.speed
        rs = np.stack([ex, ey, eth, ev], axis=1) * sw
        ri = np.stack([U[:, 0] - ref.a_ff, U[:, 1] - ref.steer_rate_ff], axis=1) * iw
        return np.concatenate([rs.ravel(), ri.ravel()])

    def _jacobian(self, X: NDArray[np.float64], U: NDArray[np.float64], sw, iw) -> NDArray[np.float64]:
        c = self.config
        H, dt, L = c.horizon, c.dt, self.wheelbase
        J = np.zeros((6 * H, 2 * H))
        S = np.zeros((5, 2 * H))
        rows = [0, 1, 2, 4]
        for k in range(H):
            _, _, th, d, v = X[k]
            A = np.eye(5)
            A[0, 2] = -dt * v * np.sin(th)
            A[0, 4] = dt * np.cos(th)
            A[1, 2] = dt * v * np.cos(th)
            A[1, 4] = dt * np.sin(th)
            A[2, 3] = dt * v / (L * np.cos(d) ** 2)
            A[2, 4] = dt * np.tan(d) / L
            S = A @ S
            S[4, 2 * k] += dt
            S[3, 2 * k + 1] += dt
            J[4 * k: 4 * k + 4] = S[rows] * sw[k][:, None]
        J[4 * H:, :] = np.diag(np.tile(iw, H))
        return J

    def solve(self, state: VehicleState, ref: ReferenceWindow) -> MpcSolution:
        """Optimize the input sequence; ``ref`` holds the targets for predicted states 1..H."""
        c = self.config
        H = c.horizon
        lb = np.tile([-c.a_max, -c.delta_dot_max], H)
        ub = -lb
        if self._warm is None:
            U = np.stack([ref.a_ff, ref.steer_rate_ff], axis=1)
        else:
            U = np.vstack([self._warm[1:], self._warm[-1:]])
        U = np.clip(U.ravel(), lb, ub).reshape(H, 2)
        x0 = state.as_array()
        sw, iw = self._weights()
        X = _rollout(x0, U, c.dt, self.wheelbase)
        r = self._residuals(X, U, ref, sw, iw)
        cost = float(r @ r)
        history = [cost]
        converged = False
        for _ in range(c.max_iter):
            J = self._jacobian(X, U, sw, iw)
            u_flat = U.ravel()
            try:
                step = np.linalg.solve(J.T @ J, -J.T @ r)
            except np.linalg.LinAlgError:
                step = np.full_like(u_flat, np.inf)
            if not np.all(np.isfinite(step)) or np.any(u_flat + step < lb) or np.any(u_flat + step > ub):
                step = lsq_linear(J, -r, bounds=(lb - u_flat, ub - u_flat), method="bvls").x
            accepted = False
            alpha = 1.0
            for _ls in range(8):
                U_try = np.clip(u_flat + alpha * step, lb, ub).reshape(H, 2)
                X_try = _rollout(x0, U_try, c.dt, self.wheelbase)
                r_try = self._residuals(X_try, U_try, ref, sw, iw)
                cost_try = float(r_try @ r_try)
                if cost_try < cost:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                converged = True
                break
            rel = (cost - cost_try) / max(cost, 1e-300)
            U, X, r, cost = U_try, X_try, r_try, cost_try
            history.append(cost)
            if rel < c.tol:
                converged = True
                break
        self._warm = U.copy()
        cmd = ControlInput(float(U[0, 0]), float(U[0, 1]))
        return MpcSolution(cmd, U, X, history, converged)

    def control(self, state: VehicleState, trajectory: TimedTrajectory, t_now: float) -> MpcSolution:
        c = self.config
        ref = reference_window(trajectory, t_now + c.dt, c.horizon, c.dt, self.wheelbase)
        return self.solve(state, ref)


def initial_state(trajectory: TimedTrajectory, wheelbase: float, delta_max: float) -> VehicleState:
    """Vehicle placed on the reference start with matching heading, steering and speed."""
    x, y = trajectory.position[0]
    delta = float(np.clip(atan(wheelbase * trajectory.kappa[0]), -delta_max, delta_max))
    return VehicleState(float(x), float(y), float(trajectory.heading[0]), delta, float(trajectory.v[0]))
