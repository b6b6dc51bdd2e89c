from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_closed_curve
from raceloop.constraint_map import ConstraintMap
from raceloop.errors import DomainError, OutOfBoundsError, RacelineError
from raceloop.nurbs import NurbsCurve, apply_closure, fit_centerline
from raceloop.timing import (
    DynamicLimits,
    TimedTrajectory,
    constraint_ratios,
    kinematics_at,
    min_lap_time_const,
    min_lap_time_spatial,
    parametric_kinematics,
    sample_trajectory,
    uniform_grid,
)

LIMITS = DynamicLimits(v_max=8.0, a_par_nominal=4.0, a_perp_nominal=5.0)


def straight_segment(length: float = 10.0) -> NurbsCurve:
    kn = np.r_[np.zeros(4), 0.3, 0.6, np.ones(4)]
    xi = np.array([kn[i + 1: i + 4].mean() for i in range(6)])
    return NurbsCurve(np.c_[length * xi, np.zeros(6)], np.ones(6), kn)


def circle_curve(radius: float = 2.0) -> NurbsCurve:
    phi = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    return apply_closure(fit_centerline(radius * np.c_[np.cos(phi), np.sin(phi)], n_ctrl=17).params)


def map_for(curve: NurbsCurve, m: float = 1.0, resolution: float = 0.25) -> ConstraintMap:
    p = curve.evaluate(uniform_grid(2048))
    lo, hi = p.min(axis=0) - 1.0, p.max(axis=0) + 1.0
    return ConstraintMap.covering((lo[0], lo[1], hi[0], hi[1]), resolution, m_init=m)


def brute_force_lap_time(curve: NurbsCurve, limits: DynamicLimits, scale: np.ndarray | float = 1.0, n: int = 2048) -> float:
    """Smallest feasible T by bracketing and bisection on an explicit per-sample feasibility test."""
    u = np.arange(n) / n
    d1 = curve.derivative(u, 1)
    d2 = curve.derivative(u, 2)
    speed = np.linalg.norm(d1, axis=1)
    tang = d1 / speed[:, None]
    a_par = np.einsum("ij,ij->i", d2, tang)
    a_perp = tang[:, 0] * d2[:, 1] - tang[:, 1] * d2[:, 0]

    def feasible(T: float) -> bool:
        ok_v = speed / T <= limits.v_max
        ok_par = np.abs(a_par) / T**2 <= scale * limits.a_par_nominal
        ok_perp = np.abs(a_perp) / T**2 <= scale * limits.a_perp_nominal
        return bool(np.all(ok_v & ok_par & ok_perp))

    hi = 1.0
    while not feasible(hi):
        hi *= 2.0
    lo = hi / 2.0
    while feasible(lo):
        lo /= 2.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if feasible(mid) else (mid, hi)
    return hi


def test_straight_segment_velocity_limited():
    T = min_lap_time_const(straight_segment(10.0), DynamicLimits(2.0, 4.0, 5.0), 2048)
    assert T == pytest.approx(5.0, rel=1e-12)
    v, a_par, a_perp = kinematics_at(straight_segment(10.0), 0.37, 5.0)
    assert v == pytest.approx(2.0, rel=1e-12)
    assert abs(a_par) < 1e-9 and abs(a_perp) < 1e-9


def test_scaling_law(rng):
    curve = random_closed_curve(rng)
    for u in rng.uniform(0, 1, 20):
        lam = rng.uniform(0.2, 5.0)
        T = rng.uniform(1.0, 10.0)
        v, ap, an = kinematics_at(curve, u, T)
        v2, ap2, an2 = kinematics_at(curve, u, lam * T)
        assert v == pytest.approx(lam * v2, rel=1e-12)
        assert ap == pytest.approx(lam**2 * ap2, rel=1e-12, abs=1e-15)
        assert an == pytest.approx(lam**2 * an2, rel=1e-12, abs=1e-15)


def test_kinematics_vs_time_domain_differences(rng):
    curve = random_closed_curve(rng)
    T = 7.0
    h = 1e-4
    for u in rng.uniform(0.05, 0.95, 30):
        t = u * T
        q = curve.evaluate(np.array([t - h, t, t + h]) / T)
        vel = (q[2] - q[0]) / (2 * h)
        acc = (q[2] - 2 * q[1] + q[0]) / h**2
        tang = vel / np.linalg.norm(vel)
        v, a_par, a_perp = kinematics_at(curve, u, T)
        ref_par = acc @ tang
        ref_perp = tang[0] * acc[1] - tang[1] * acc[0]
        scale = np.linalg.norm(acc)
        assert v == pytest.approx(np.linalg.norm(vel), rel=1e-5)
        assert abs(a_par - ref_par) <= 1e-5 * scale
        assert abs(a_perp - ref_perp) <= 1e-5 * scale


def test_kinematics_rejects_bad_lap_time(rng):
    with pytest.raises(DomainError):
        kinematics_at(random_closed_curve(rng), 0.5, 0.0)


def test_const_matches_brute_force_on_random_curves():
    rng = np.random.default_rng(99)
    for _ in range(20):
        curve = random_closed_curve(rng, n=int(rng.integers(8, 18)), radius=rng.uniform(2, 8))
        limits = DynamicLimits(rng.uniform(2, 10), rng.uniform(2, 6), rng.uniform(2, 8))
        T = min_lap_time_const(curve, limits, 2048)
        assert T == pytest.approx(brute_force_lap_time(curve, limits), rel=1e-3)


def test_active_constraint_at_returned_time(rng):
    for _ in range(10):
        curve = random_closed_curve(rng)
        T = min_lap_time_const(curve, LIMITS, 2048)
        ratios = constraint_ratios(parametric_kinematics(curve, uniform_grid(2048)), LIMITS, T)
        # accelerations scale with T^-2, so the acceleration ratio is compared through its square root
        top = max(ratios[0].max(), np.sqrt(ratios[1].max()), np.sqrt(ratios[2].max()))
        assert abs(top - 1.0) <= 1e-6
        assert ratios.max() <= 1.0 + 1e-6


def test_unit_map_matches_constant_limits(rng):
    for _ in range(5):
        curve = random_closed_curve(rng)
        assert min_lap_time_spatial(curve, LIMITS, map_for(curve, 1.0)) == min_lap_time_const(curve, LIMITS)


def test_quarter_map_doubles_time(rng):
    curve = random_closed_curve(rng)
    fast = DynamicLimits(1e6, 4.0, 5.0)
    T1 = min_lap_time_const(curve, fast)
    T4 = min_lap_time_spatial(curve, fast, map_for(curve, 0.25))
    assert T4 == pytest.approx(2.0 * T1, rel=1e-12)


def test_corner_patch_matches_brute_force(rng):
    curve = random_closed_curve(rng, radius=4.0)
    cmap = map_for(curve)
    x1, y1, x2, y2 = cmap.extent
    cx, cy = cmap.cell_centers()
    m = np.array(cmap.M)
    m[np.ix_(cx > 0.5 * (x1 + x2), cy > 0.5 * (y1 + y2))] = 0.2
    patched = ConstraintMap(cmap.x0, cmap.y0, cmap.resolution, m, cmap.V)
    T = min_lap_time_spatial(curve, LIMITS, patched, 2048)
    scale = patched.lookup(curve.evaluate(uniform_grid(2048)))
    assert T == pytest.approx(brute_force_lap_time(curve, LIMITS, scale), rel=1e-3)
    assert T > min_lap_time_const(curve, LIMITS)


def test_curve_outside_map_names_u(rng):
    curve = random_closed_curve(rng, radius=4.0)
    small = ConstraintMap.covering((-1.0, -1.0, 1.0, 1.0), 0.25)
    with pytest.raises(OutOfBoundsError) as info:
        min_lap_time_spatial(curve, LIMITS, small)
    assert info.value.u is not None and 0.0 <= info.value.u < 1.0


def test_circle_lap_time():
    T = min_lap_time_const(circle_curve(2.0), DynamicLimits(1e6, 1e6, 8.0))
    assert T == pytest.approx(np.pi, rel=0.02)


def test_degenerate_curve_errors():
    kn = np.r_[np.zeros(4), 0.5, np.ones(4)]
    curve = NurbsCurve(np.ones((5, 2)), np.ones(5), kn)
    with pytest.raises(RacelineError):
        min_lap_time_const(curve, LIMITS)


def test_limits_validation():
    with pytest.raises(DomainError):
        DynamicLimits(0.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        DynamicLimits(1.0, -1.0, 1.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), factor=st.floats(0.1, 1.0))
def test_map_monotonicity(seed, factor):
    rng = np.random.default_rng(seed)
    curve = random_closed_curve(rng)
    base = map_for(curve, 1.0, resolution=0.5)
    m = rng.uniform(0.3, 1.8, base.shape)
    lower = m * np.where(rng.uniform(size=m.shape) < 0.5, factor, 1.0)
    hi = ConstraintMap(base.x0, base.y0, base.resolution, m, base.V)
    lo = ConstraintMap(base.x0, base.y0, base.resolution, lower, base.V)
    assert min_lap_time_spatial(curve, LIMITS, lo, 512) >= min_lap_time_spatial(curve, LIMITS, hi, 512)


# -- sampled trajectories -------------------------------------------------------


def test_sample_trajectory_grid(rng):
    curve = random_closed_curve(rng)
    traj = sample_trajectory(curve, 6.0, 512)
    assert traj.n_samples == 512
    assert np.all(np.diff(traj.u) > 0)
    assert traj.u[0] == 0.0
    assert 1.0 - traj.u[-1] == pytest.approx(1 / 512, abs=1e-15)
    for i in rng.integers(0, 512, 20):
        v, ap, an = kinematics_at(curve, traj.u[i], 6.0)
        assert traj.v[i] == v and traj.a_par[i] == ap and traj.a_perp[i] == an


def test_sample_trajectory_downsampling(rng):
    curve = random_closed_curve(rng)
    coarse = sample_trajectory(curve, 5.0, 512)
    fine = sample_trajectory(curve, 5.0, 1024)
    for name in ("position", "v", "a_par", "a_perp", "kappa"):
        np.testing.assert_array_equal(getattr(fine, name)[::2], getattr(coarse, name))


def test_sample_trajectory_wrap_continuity(rng):
    curve = random_closed_curve(rng)
    traj = sample_trajectory(curve, 5.0, 4096)
    step = np.linalg.norm(np.diff(traj.position, axis=0), axis=1)
    wrap = np.linalg.norm(traj.position[0] - traj.position[-1])
    assert wrap <= 1.5 * step.max()
    assert abs(traj.v[0] - traj.v[-1]) <= 5 * np.abs(np.diff(traj.v)).max() + 1e-12


def test_sample_trajectory_rejects_bad_time(rng):
    with pytest.raises(DomainError):
        sample_trajectory(random_closed_curve(rng), -1.0, 512)


def test_trajectory_csv_roundtrip(rng):
    traj = sample_trajectory(random_closed_curve(rng), 5.5, 512)
    text = traj.to_csv()
    assert text.splitlines()[0] == f"# T={5.5:.17g} N=512"
    assert text.splitlines()[1] == "u,x,y,v,a_par,a_perp,kappa"
    back = TimedTrajectory.from_csv(text)
    assert back.lap_time == traj.lap_time
    for name in ("u", "position", "v", "a_par", "a_perp", "kappa"):
        np.testing.assert_array_equal(getattr(back, name), getattr(traj, name))
    np.testing.assert_allclose(np.cos(back.heading - traj.heading), 1.0, atol=1e-4)
