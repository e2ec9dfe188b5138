import json

import pytest

from kinefuse import config as cfgmod
from kinefuse.errors import ConfigError


def test_shipped_config_matches_acceptance_setup():
    cfg = cfgmod.load_config()
    assert cfg.data.n_frames == 2000
    assert cfg.data.train_seeds == (1, 2, 3) and cfg.data.test_seeds == (101, 102)
    n = cfg.noise
    assert (n.vision_jitter_sigma, n.occlusion_prob, n.occlusion_sigma, n.bone_scale_sigma, n.imu_drift_rate) == \
        (15.0, 0.3, 80.0, 0.03, 0.002)
    assert cfg.fusion.theta_t == 0.25
    assert cfg.sweep.theta_grid == (0.15, 0.20, 0.25, 0.30, 0.35)


def test_dict_roundtrip():
    cfg = cfgmod.load_config()
    again = cfgmod.config_from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again.to_dict() == cfg.to_dict()


def test_missing_sections_take_defaults():
    cfg = cfgmod.config_from_dict({"format": "kinefuse-config", "version": 1, "fusion": {"epochs": 3}})
    assert cfg.fusion.epochs == 3 and cfg.data.n_frames == 2000


def test_overrides():
    cfg = cfgmod.apply_overrides(cfgmod.load_config(), {"fusion.theta_t": 0.3, "data.n_frames": 10,
                                                        "backend": "numpy"})
    assert cfg.fusion.theta_t == 0.3 and cfg.data.n_frames == 10 and cfg.backend == "numpy"
    with pytest.raises(ConfigError):
        cfgmod.apply_overrides(cfg, {"fusion.nope": 1})
    with pytest.raises(ConfigError):
        cfgmod.apply_overrides(cfg, {"nope.x": 1})
    with pytest.raises(ConfigError):
        cfgmod.apply_overrides(cfg, {"noise.occlusion_prob": 2.0})


@pytest.mark.parametrize("doc", [
    [],
    {"format": "other"},
    {"version": 7},
    {"extra": {}},
    {"data": {"n_frames": 0}},
    {"data": []},
    {"noise": {"sigma": 1}},
    {"sweep": {"theta_grid": []}},
    {"sweep": {"theta_grid": [-0.1]}},
    {"backend": "cuda"},
])
def test_bad_documents(doc):
    with pytest.raises(ConfigError):
        cfgmod.config_from_dict(doc)


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        cfgmod.load_config(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(ConfigError):
        cfgmod.load_config(tmp_path / "bad.json")


def test_parse_theta():
    assert cfgmod.parse_theta("0.25") == 0.25
    assert cfgmod.parse_theta("inf") == float("inf")
    with pytest.raises(ConfigError):
        cfgmod.parse_theta("-1")
    with pytest.raises(ConfigError):
        cfgmod.parse_theta("nan")
