import json

import pytest

from cmtssl.config import RunConfig, parse_value
from cmtssl.errors import ConfigurationError


def test_defaults():
    cfg = RunConfig()
    assert cfg["curriculum.K"] == 32 and cfg["curriculum.F"] == 1.5 and cfg["curriculum.S"] == 3
    assert cfg["loss.mim"] == 4.0 and cfg["optim.batch_size"] == 16 and cfg["optim.lr"] == 5e-4
    assert cfg["mim.ratio"] == 0.6


def test_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv("CMTSSL_SEED", "5")
    assert RunConfig()["seed"] == 5
    path = tmp_path / "c.toml"
    path.write_text("seed = 7\n[curriculum]\nK = 8\n")
    cfg = RunConfig.resolve(path, {"curriculum.K": 4})
    assert cfg["seed"] == 7 and cfg["curriculum.K"] == 4


def test_json_file_and_relative_paths(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"data": {"scenes": ["a.hsr"], "split_file": "split.json"}}))
    cfg = RunConfig.resolve(path)
    assert cfg["data.scenes"] == [str(tmp_path / "a.hsr")]
    assert cfg["data.split_file"] == str(tmp_path / "split.json")


@pytest.mark.parametrize("data", [{"curriculum": {"Q": 1}}, {"curriculum": 3}, {"curriculum": {"S": 0}},
                                  {"strategy": "magic"}, {"mim": {"ratio": 1.0}}])
def test_invalid(data):
    with pytest.raises(ConfigurationError):
        RunConfig(data)


def test_unknown_override():
    with pytest.raises(ConfigurationError):
        RunConfig().set("optim.momentum", 0.9)


def test_parse_value():
    assert parse_value("3") == 3 and parse_value("1.5") == 1.5 and parse_value("true") is True
    assert parse_value("8,8") == [8, 8] and parse_value("std") == "std"


def test_typed_views():
    cfg = RunConfig({"curriculum": {"enabled": False}, "mim": {"patch": [4, 4, 2]}})
    tc = cfg.train_config("cmtssl", seed=9)
    assert tc.strategy == "mtssl" and tc.seed == 9 and tc.masking.patch_c == 2
    assert cfg.loss_weights().mim == 4.0
    assert cfg.finetune_config().epochs == 30


def test_snapshot_roundtrip(tmp_path):
    cfg = RunConfig({"seed": 3})
    path = cfg.save(tmp_path / "config.snapshot")
    assert RunConfig.resolve(path).data == cfg.data
