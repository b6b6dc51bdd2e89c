from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from raceloop.errors import DomainError
from raceloop.plant import (
    CirclePatch,
    ControlInput,
    FrictionField,
    Plant,
    PolygonPatch,
    VehicleParams,
    VehicleState,
    dynamics,
    rk4_step,
    saturated_steer,
)

GRIPPY = VehicleParams(a_par_physical=1e9, a_perp_physical=1e9)


def test_dynamics_zero_speed():
    d = dynamics(np.array([1.0, 2.0, 0.3, 0.2, 0.0]), 1.5, -0.4, 0.33)
    np.testing.assert_array_equal(d, [0.0, 0.0, 0.0, -0.4, 1.5])


def test_dynamics_straight_line():
    s = np.array([0.0, 0.0, 0.7, 0.0, 3.0])
    for _ in range(100):
        s = rk4_step(s, 0.0, 0.0, 0.33, 0.001)
    assert s[2] == 0.7
    np.testing.assert_allclose(s[:2], 0.3 * np.array([math.cos(0.7), math.sin(0.7)]), atol=1e-12)


def test_circle_closes_after_one_period():
    L, delta, v, dt = 0.33, 0.2, 2.0, 1e-3
    radius = L / math.tan(delta)
    period = 2 * math.pi * radius / v
    s0 = np.array([0.0, 0.0, 0.0, delta, v])
    s = s0.copy()
    steps = int(period // dt)
    for _ in range(steps):
        s = rk4_step(s, 0.0, 0.0, L, dt)
    s = rk4_step(s, 0.0, 0.0, L, period - steps * dt)
    assert np.linalg.norm(s[:2] - s0[:2]) < 1e-6
    # the plant without saturation follows the same path
    plant = Plant(GRIPPY)
    st_ = VehicleState(*s0)
    for _ in range(steps):
        st_, slip, _ = plant.step(st_, ControlInput(0.0, 0.0), dt)
        assert not slip
    st_, _, _ = plant.step(st_, ControlInput(0.0, 0.0), period - steps * dt)
    assert math.hypot(st_.x, st_.y) < 1e-6


def test_step_below_saturation_equals_rk4():
    plant = Plant(VehicleParams())
    s = VehicleState(1.0, -2.0, 0.4, 0.05, 2.0)
    nxt, slip, mu = plant.step(s, ControlInput(1.0, 0.5), 0.001)
    ref = rk4_step(s.as_array(), 1.0, 0.5, 0.33, 0.001)
    assert not slip and mu == 1.0
    np.testing.assert_allclose(nxt.as_array(), ref, rtol=0, atol=1e-15)


def test_zero_input_from_rest():
    plant = Plant()
    s = VehicleState(3.0, 4.0, 1.0, 0.1, 0.0)
    nxt, slip, _ = plant.step(s, ControlInput(0.0, 0.0), 0.001)
    assert nxt == s and not slip


def test_saturation_matches_clipping_formula():
    params = VehicleParams(a_par_physical=4.4, a_perp_physical=5.5)
    field = FrictionField(1.0, (CirclePatch(0.0, 0.0, 5.0, 0.2),))
    plant = Plant(params, field)
    v = 3.0
    s = VehicleState(0.0, 0.0, 0.0, params.delta_max, v)
    dt = 1e-3
    nxt, slip, mu = plant.step(s, ControlInput(0.0, 0.0), dt)
    assert slip and mu == pytest.approx(0.2)
    cap = 0.2 * params.a_perp_physical
    yaw_rate = (nxt.theta - s.theta) / dt
    assert yaw_rate == pytest.approx(cap / v, rel=1e-12)
    d_eff, flag = saturated_steer(params.delta_max, v, params.wheelbase, cap)
    assert flag and d_eff == pytest.approx(math.atan(cap * params.wheelbase / v**2))


def test_longitudinal_clip_sets_slip():
    plant = Plant(VehicleParams(a_par_physical=4.0), FrictionField(0.5))
    s = VehicleState(0.0, 0.0, 0.0, 0.0, 2.0)
    nxt, slip, _ = plant.step(s, ControlInput(5.0, 0.0), 0.01)
    assert slip
    assert nxt.v == pytest.approx(2.0 + 0.01 * 2.0)


def test_steering_and_speed_bounds():
    params = VehicleParams()
    plant = Plant(params)
    s = VehicleState(0.0, 0.0, 0.0, params.delta_max, 0.01)
    nxt, _, _ = plant.step(s, ControlInput(-8.0, 100.0), 0.01)
    assert nxt.delta <= params.delta_max
    assert nxt.v >= 0.0


def test_step_rejects_bad_dt():
    with pytest.raises(DomainError):
        Plant().step(VehicleState(0, 0, 0, 0, 1), ControlInput(0, 0), 0.0)


@settings(max_examples=100, deadline=None)
@given(
    theta=st.floats(-math.pi, math.pi),
    delta=st.floats(-0.3, 0.3),
    v=st.floats(0.0, 5.0),
)
def test_speed_constant_without_acceleration(theta, delta, v):
    plant = Plant(GRIPPY)
    nxt, _, _ = plant.step(VehicleState(0.0, 0.0, theta, delta, v), ControlInput(0.0, 0.0), 0.001)
    assert abs(nxt.v - v) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(
    mu_lo=st.floats(0.05, 1.0),
    mu_gap=st.floats(0.0, 1.0),
    delta=st.floats(-0.42, 0.42),
    v=st.floats(0.1, 6.0),
)
def test_lower_grip_never_raises_lateral_acceleration(mu_lo, mu_gap, delta, v):
    s = VehicleState(0.0, 0.0, 0.0, delta, v)
    dt = 1e-3

    def lateral(mu: float) -> float:
        nxt, _, _ = Plant(VehicleParams(), FrictionField(mu)).step(s, ControlInput(0.0, 0.0), dt)
        return abs(v * (nxt.theta - s.theta) / dt)

    assert lateral(mu_lo) <= lateral(mu_lo + mu_gap) + 1e-12


def test_friction_field_patches():
    field = FrictionField(
        0.8,
        (
            CirclePatch(0.0, 0.0, 1.0, 0.5),
            PolygonPatch(((2.0, 2.0), (4.0, 2.0), (4.0, 4.0), (2.0, 4.0)), 0.25),
        ),
    )
    assert field.mu(0.5, 0.5) == pytest.approx(0.4)
    assert field.mu(3.0, 3.0) == pytest.approx(0.2)
    assert field.mu(10.0, 0.0) == 0.8
    with pytest.raises(DomainError):
        FrictionField(0.0)
    with pytest.raises(DomainError):
        FrictionField(1.0, (CirclePatch(0, 0, 1, 0.0),))


def test_headroom_scales_physical_limits():
    p = VehicleParams.with_headroom(4.0, 5.0, 1.3)
    assert p.a_par_physical == pytest.approx(5.2) and p.a_perp_physical == pytest.approx(6.5)
    assert p.kappa_max == pytest.approx(math.tan(0.42) / 0.33)
