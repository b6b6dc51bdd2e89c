from __future__ import annotations

import json

import pytest

from conftest import EXPERIMENTS
from raceloop.config import ExperimentConfig
from raceloop.errors import ConfigError


def test_defaults_validate_and_roundtrip():
    cfg = ExperimentConfig()
    back = ExperimentConfig.from_dict(json.loads(cfg.dumps()))
    assert back.dumps() == cfg.dumps()


@pytest.mark.parametrize(
    "data",
    [
        {"laps": 0},
        {"iterations_per_lap": 0},
        {"trajectory_samples": 100},
        {"optimizer": {"exploration": True}},
        {"no_such_key": 1},
        {"vehicle": {"no_such_field": 1}},
        {"limits": {"v_max": -1.0, "a_par_nominal": 1.0, "a_perp_nominal": 1.0}},
        {"friction": {"base": 1.0, "patches": [{"type": "hexagon", "scale": 0.5}]}},
    ],
)
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        cfg = ExperimentConfig.from_dict(data)
        cfg.dynamic_limits()
        cfg.friction_field()


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(bad)


def test_factories():
    cfg = ExperimentConfig.from_dict(
        {
            "vehicle": {"headroom": 1.3},
            "friction": {"base": 0.5, "patches": [{"type": "circle", "cx": 0, "cy": 0, "r": 1, "scale": 0.2}]},
        }
    )
    vp = cfg.vehicle_params()
    assert vp.a_perp_physical == pytest.approx(1.3 * 5.0)
    assert cfg.friction_field().mu(0.0, 0.0) == pytest.approx(0.1)
    assert cfg.objective_config().kappa_max == pytest.approx(vp.kappa_max)
    assert cfg.mpc_config().a_max == vp.a_cmd_max
    track = cfg.track_model()
    cmap = cfg.initial_map(track)
    x1, y1, x2, y2 = cmap.extent
    bx1, by1, bx2, by2 = track.bounds()
    assert x1 <= bx1 and y1 <= by1 and x2 >= bx2 and y2 >= by2


@pytest.mark.parametrize("path", sorted(EXPERIMENTS.glob("*.json")), ids=lambda p: p.stem)
def test_bundled_experiments_load(path):
    cfg = ExperimentConfig.load(path)
    assert cfg.track in ("oval", "s_curve")
    cfg.track_model()
    cfg.friction_field()
