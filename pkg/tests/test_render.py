from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np
import pytest

from raceloop.blame import blame_region
from raceloop.constraint_map import ConstraintMap
from raceloop.nurbs import apply_closure
from raceloop.optimizer import initial_parameters
from raceloop.render import cell_color, render_svg
from raceloop.timing import DynamicLimits, min_lap_time_const, sample_trajectory
from raceloop.track import oval_track

NS = {"s": "http://www.w3.org/2000/svg"}


@pytest.fixture(scope="module")
def scene():
    track = oval_track()
    curve = apply_closure(initial_parameters(track, 17))
    traj = sample_trajectory(curve, min_lap_time_const(curve, DynamicLimits(8.0, 4.0, 5.0)), 512)
    cmap = ConstraintMap.covering(track.bounds(1.0), 0.25)
    return track, traj, cmap


def layer(root: ET.Element, name: str) -> ET.Element:
    found = root.find(f".//s:g[@id='{name}']", NS)
    assert found is not None
    return found


def test_cell_color_convention():
    assert cell_color(0.05, 0.05, 2.0) == ("#0000ff", 1.0)
    assert cell_color(2.0, 0.05, 2.0) == ("#ff0000", 1.0)
    assert cell_color(1.0, 0.05, 2.0)[1] == 0.0
    assert cell_color(0.5, 0.0, 2.0) == ("#0000ff", 0.5)


def test_plan_only_document(scene):
    track, traj, _ = scene
    root = ET.fromstring(render_svg(track, traj))
    assert root.tag == "{http://www.w3.org/2000/svg}svg"
    assert len(layer(root, "track")) == 2
    assert len(layer(root, "planned")) == 1
    assert len(layer(root, "zones")) >= 2
    assert len(layer(root, "map")) == 0
    assert len(layer(root, "executed")) == 0
    assert len(layer(root, "blame")) == 0


def test_map_cells_colored(scene, rng):
    track, traj, cmap = scene
    m = np.ones(cmap.shape)
    picks = [(int(rng.integers(cmap.shape[0])), int(rng.integers(cmap.shape[1]))) for _ in range(10)]
    picks = list(dict.fromkeys(picks))
    for ix, iy in picks:
        m[ix, iy] = rng.choice([rng.uniform(0.05, 0.99), rng.uniform(1.01, 2.0)])
    colored = ConstraintMap(cmap.x0, cmap.y0, cmap.resolution, m, cmap.V)
    root = ET.fromstring(render_svg(track, traj, colored))
    rects = layer(root, "map").findall("s:rect", NS)
    assert len(rects) == len(picks)
    for rect in rects:
        ix, iy = int(rect.get("data-ix")), int(rect.get("data-iy"))
        color, alpha = cell_color(m[ix, iy], colored.m_min, colored.m_max)
        assert rect.get("fill") == color
        assert float(rect.get("fill-opacity")) == pytest.approx(alpha, abs=1e-4)
        assert float(rect.get("x")) == pytest.approx(cmap.x0 + ix * cmap.resolution, abs=1e-4)


def test_executed_and_blame_layers(scene):
    track, traj, cmap = scene

    class Driven:
        positions = traj.position[::4] + 0.05

    reg = blame_region(traj, 10, 40, -0.2)
    root = ET.fromstring(render_svg(track, traj, cmap, Driven(), [reg]))
    assert len(layer(root, "executed")) == 1
    blame = layer(root, "blame").findall("s:polyline", NS)
    assert len(blame) == 1 and float(blame[0].get("data-e")) == pytest.approx(-0.2)
