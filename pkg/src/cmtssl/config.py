"""Run configuration: defaults < config file < command-line overrides, snapshotted per run."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Any

from .errors import ConfigurationError

SCHEMA_VERSION = 1

DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "strategy": "cmtssl",
    "data": {
        # scene paths (payload or stem); empty -> synthetic data from the `synthetic` table
        "scenes": [],
        # extra unlabelled scenes tiled entirely into the pretraining set
        "pretrain_scenes": [],
        "split_file": None,
        "tile_size": 16,
        "pretrain_stride": 8,
        # explicit regions {x0, y0, x1, y1, split, scene?}; empty -> grid assignment below
        "regions": [],
        "grid_block": 32,
        "grid_pattern": ["train", "train", "validation", "test"],
    },
    "synthetic": {
        "classes": 3,
        "size": 128,
        "bands": 32,
        "pretrain_scenes": 3,
        "texture_amplitude": [0.0, 0.25, 0.5, 1.0, 2.0],
        "noise_std": 0.1,
        "seed": 0,
    },
    "curriculum": {"enabled": True, "S": 3, "K": 32, "F": 1.5, "aggregation": "average"},
    "jigsaw": {"spatial": {"patch": [8, 8]}, "spectral": {"blocks": 4}},
    # a two-element patch means C/4 bands deep
    "mim": {"patch": [8, 8], "ratio": 0.6},
    "loss": {"spa": 1.0, "spe": 1.0, "mim": 4.0},
    "optim": {
        "lr": 5e-4,
        "batch_size": 16,
        "weight_decay": 0.01,
        # full-dataset epochs for non-curriculum pretraining; null -> match the curriculum step budget
        "pretrain_epochs": None,
    },
    "finetune": {"epochs": 30, "lr": 5e-4, "batch_size": 16, "freeze_encoder": False},
    "model": {"widths": [8, 12, 16, 24], "budget": 25000},
}


def _merge(base: dict, update: dict, path: str = "") -> dict:
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and not isinstance(value, dict):
            raise ConfigurationError(f"config key {where!r} must be a table")
        if isinstance(base[key], dict):
            _merge(base[key], value, where + ".")
        else:
            base[key] = value
    return base


def parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [parse_value(t) for t in text.split(",")]
    return text


def _anchor_paths(data: dict, base: Path):
    """Make scene and split paths relative to the config file absolute."""
    for key in ("scenes", "pretrain_scenes"):
        if key in data:
            data[key] = [str(base / p) if not Path(p).is_absolute() else p for p in data[key]]
    if data.get("split_file") and not Path(data["split_file"]).is_absolute():
        data["split_file"] = str(base / data["split_file"])


def load_file(path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        import tomli

        return tomli.loads(text)
    if path.suffix in (".json", ".snapshot"):
        return json.loads(text)
    raise ConfigurationError(f"unsupported config format {path.suffix!r} (use .toml or .json)")


class RunConfig:
    """Nested configuration with dotted-key access (``cfg["curriculum.K"]``)."""

    def __init__(self, data: dict | None = None):
        self.data = copy.deepcopy(DEFAULTS)
        env_seed = os.environ.get("CMTSSL_SEED")
        if env_seed:
            self.data["seed"] = int(env_seed)
        if data:
            _merge(self.data, copy.deepcopy(data))
        self.validate()

    @classmethod
    def resolve(cls, path=None, overrides: dict[str, Any] | None = None) -> "RunConfig":
        raw = load_file(path) if path else None
        if raw and isinstance(raw.get("data"), dict):
            _anchor_paths(raw["data"], Path(path).resolve().parent)
        cfg = cls(raw)
        for key, value in (overrides or {}).items():
            cfg.set(key, value)
        cfg.validate()
        return cfg

    def __getitem__(self, dotted: str) -> Any:
        node = self.data
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                raise KeyError(dotted)
            node = node[part]
        return node

    def set(self, dotted: str, value: Any):
        parts = dotted.split(".")
        node = self.data
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigurationError(f"unknown config key {dotted!r}")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigurationError(f"unknown config key {dotted!r}")
        node[parts[-1]] = value

    def copy(self) -> "RunConfig":
        return RunConfig(self.data)

    def validate(self):
        c = self.data["curriculum"]
        if int(c["S"]) < 1 or int(c["K"]) < 1 or not float(c["F"]) > 0:
            raise ConfigurationError("curriculum needs S >= 1, K >= 1, F > 0")
        if self.data["strategy"] not in ("scratch", "mim", "jps", "mtssl", "cmtssl"):
            raise ConfigurationError(f"unknown strategy {self.data['strategy']!r}")
        if not 0 < float(self.data["mim"]["ratio"]) < 1:
            raise ConfigurationError("mim.ratio must be in (0, 1)")

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        return path

    # -- typed views -----------------------------------------------------------

    def train_config(self, strategy: str | None = None, seed: int | None = None):
        from .pretext import MaskingConfig, SpatialJigsawConfig, SpectralJigsawConfig
        from .training import TrainConfig

        d = self.data
        patch = list(d["mim"]["patch"])
        strategy = strategy or d["strategy"]
        if strategy == "cmtssl" and not d["curriculum"]["enabled"]:
            strategy = "mtssl"
        return TrainConfig(
            strategy=strategy,
            learning_rate=float(d["optim"]["lr"]),
            batch_size=int(d["optim"]["batch_size"]),
            weight_decay=float(d["optim"]["weight_decay"]),
            seed=int(d["seed"] if seed is None else seed),
            S=int(d["curriculum"]["S"]),
            K=int(d["curriculum"]["K"]),
            F=float(d["curriculum"]["F"]),
            epochs=None if d["optim"]["pretrain_epochs"] is None else int(d["optim"]["pretrain_epochs"]),
            aggregation=d["curriculum"]["aggregation"],
            spatial=SpatialJigsawConfig(*[int(v) for v in d["jigsaw"]["spatial"]["patch"]]),
            spectral=SpectralJigsawConfig(int(d["jigsaw"]["spectral"]["blocks"])),
            masking=MaskingConfig(int(patch[0]), int(patch[1]), int(patch[2]) if len(patch) > 2 and patch[2] else None,
                                  float(d["mim"]["ratio"])),
        )

    def loss_weights(self):
        from .training import LossWeights

        w = self.data["loss"]
        return LossWeights(float(w["spa"]), float(w["spe"]), float(w["mim"]))

    def finetune_config(self, seed: int | None = None):
        from .training import FinetuneConfig

        f = self.data["finetune"]
        return FinetuneConfig(
            learning_rate=float(f["lr"]),
            batch_size=int(f["batch_size"]),
            weight_decay=float(self.data["optim"]["weight_decay"]),
            epochs=int(f["epochs"]),
            freeze_encoder=bool(f["freeze_encoder"]),
            seed=int(self.data["seed"] if seed is None else seed),
        )
