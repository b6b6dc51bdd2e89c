from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from raceloop.nurbs import FreeParameters, NurbsCurve, apply_closure, knots_from_logits

ROOT = Path(__file__).resolve().parents[1]
EXPERIMENTS = ROOT / "experiments"

# criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def random_free_parameters(rng: np.random.Generator, n: int = 12, radius: float = 3.0, jitter: float = 0.4) -> FreeParameters:
    """Free parameters of a wobbly closed loop around the origin."""
    k = n - 2
    # leave angular room for the three points the closure appends
    phi = np.linspace(0.0, 2 * np.pi, n + 1, endpoint=False)[:k]
    r = radius * (1.0 + jitter * rng.uniform(-0.5, 0.5, k))
    pts = np.c_[r * np.cos(phi), r * np.sin(phi)]
    weights = np.exp(rng.uniform(-0.4, 0.4, k))
    knots = knots_from_logits(rng.normal(0.0, 0.3, n - 4))
    return FreeParameters(pts, weights, knots)


def random_closed_curve(rng: np.random.Generator, n: int = 12, **kw: float) -> NurbsCurve:
    return apply_closure(random_free_parameters(rng, n, **kw))


def random_open_curve(rng: np.random.Generator, n_ctrl: int = 8) -> NurbsCurve:
    pts = rng.uniform(-2.0, 2.0, (n_ctrl, 2))
    w = np.exp(rng.uniform(-0.5, 0.5, n_ctrl))
    interior = np.sort(rng.uniform(0.05, 0.95, n_ctrl - 4))
    knots = np.r_[np.zeros(4), interior, np.ones(4)]
    return NurbsCurve(pts, w, knots)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):  # noqa: ARG001
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
