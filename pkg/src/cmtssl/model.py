"""Shared lightweight encoder with spatial-jigsaw, spectral-jigsaw, MIM and segmentation heads.

Tensors cross the public API channels-last, ``(B, H, W, C)``, matching the
cube layout used everywhere else; modules work channels-first internally.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as Fn

from .errors import ConfigurationError, FormatError, ShapeError

SCHEMA_VERSION = 1
DEFAULT_BUDGET = 25_000
HEAD_KINDS = ("spatial", "spectral", "mim", "segmentation")


@dataclass
class EncoderSpec:
    height: int = 16
    width: int = 16
    bands: int = 32
    widths: tuple[int, ...] = (8, 12, 16, 24)
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != 4 or min(self.widths) < 1:
            raise ConfigurationError("encoder widths must be four positive channel counts")
        if self.height % 4 or self.width % 4:
            raise ConfigurationError("encoder input height and width must be multiples of 4 (two 2x down stages)")


@dataclass
class HeadSpec:
    kind: str
    # spatial: patch grid (gh, gw); spectral: (blocks,); segmentation: (num_classes,)
    shape: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ConfigurationError(f"unknown head kind {self.kind!r}")
        self.shape = tuple(int(s) for s in self.shape)

    @property
    def n(self) -> int:
        if self.kind == "spatial":
            return self.shape[0] * self.shape[1]
        if self.kind == "spectral":
            return self.shape[0]
        raise AttributeError(self.kind)


def _init_fan_in_uniform(module: nn.Module, gen: torch.Generator):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = math.sqrt(6.0 / fan_in)
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()


class UNetEncoder(nn.Module):
    """Spectral 1x1 reduction followed by a two-level U-Net over the spatial grid.

    Any module mapping ``(B, C, H, W)`` to ``(B, out_dim, H, W)`` with an
    ``out_dim`` attribute can stand in for it.
    """

    def __init__(self, bands: int, widths=(8, 12, 16, 24)):
        super().__init__()
        w0, w1, w2, w3 = widths
        self.reduce = nn.Conv2d(bands, w0, 1)
        self.enc1 = nn.Conv2d(w0, w1, 3, padding=1)
        self.enc2 = nn.Conv2d(w1, w2, 3, padding=1)
        self.enc3 = nn.Conv2d(w2, w3, 3, padding=1)
        self.dec2 = nn.Conv2d(w3 + w2, w2, 3, padding=1)
        self.dec1 = nn.Conv2d(w2 + w1, w1, 3, padding=1)
        self.out_dim = w1

    def forward(self, x):
        x = Fn.relu(self.reduce(x))
        s1 = Fn.relu(self.enc1(x))
        s2 = Fn.relu(self.enc2(Fn.max_pool2d(s1, 2)))
        b = Fn.relu(self.enc3(Fn.max_pool2d(s2, 2)))
        u2 = Fn.relu(self.dec2(torch.cat([Fn.interpolate(b, scale_factor=2.0, mode="nearest"), s2], 1)))
        return Fn.relu(self.dec1(torch.cat([Fn.interpolate(u2, scale_factor=2.0, mode="nearest"), s1], 1)))


class SpatialJigsawHead(nn.Module):
    """Average-pools features onto the patch grid and scores every (slot, origin) pair."""

    def __init__(self, dim: int, grid: tuple[int, int]):
        super().__init__()
        self.grid = tuple(grid)
        n = grid[0] * grid[1]
        self.fc = nn.Linear(dim * n, n * n)

    def forward(self, feat):
        pooled = Fn.adaptive_avg_pool2d(feat, self.grid)
        return self.fc(pooled.flatten(1))


class SpectralJigsawHead(nn.Module):
    def __init__(self, dim: int, blocks: int, hidden: int = 32):
        super().__init__()
        self.hidden = nn.Linear(dim, hidden)
        self.fc = nn.Linear(hidden, blocks * blocks)

    def forward(self, feat):
        return self.fc(Fn.relu(self.hidden(feat.mean(dim=(2, 3)))))


class ReconstructionHead(nn.Module):
    def __init__(self, dim: int, bands: int):
        super().__init__()
        self.fc = nn.Conv2d(dim, bands, 1)

    def forward(self, feat):
        return self.fc(feat)


class SegmentationHead(nn.Module):
    def __init__(self, dim: int, num_classes: int):
        super().__init__()
        self.fc = nn.Conv2d(dim, num_classes, 1)

    def forward(self, feat):
        return self.fc(feat)


def _channels_first(x) -> torch.Tensor:
    if not torch.is_tensor(x):
        x = torch.as_tensor(np.asarray(x), dtype=torch.float32)
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.dim() != 4:
        raise ShapeError(f"expected (B, H, W, C) input, got shape {tuple(x.shape)}")
    return x.permute(0, 3, 1, 2)


class MultiTaskModel(nn.Module):
    def __init__(self, enc_spec: EncoderSpec, heads: list[HeadSpec], encoder: nn.Module | None = None):
        super().__init__()
        self.enc_spec = enc_spec
        self.head_specs = {h.kind: h for h in heads}
        self.encoder = encoder if encoder is not None else UNetEncoder(enc_spec.bands, enc_spec.widths)
        d = self.encoder.out_dim
        self.heads = nn.ModuleDict()
        for h in heads:
            if h.kind == "spatial":
                if len(h.shape) != 2 or h.n < 2:
                    raise ConfigurationError(f"spatial head needs a (rows, cols) patch grid, got {h.shape}")
                if enc_spec.height % h.shape[0] or enc_spec.width % h.shape[1]:
                    raise ConfigurationError(f"patch grid {h.shape} does not divide {enc_spec.height}x{enc_spec.width}")
                self.heads["spatial"] = SpatialJigsawHead(d, h.shape)
            elif h.kind == "spectral":
                if len(h.shape) != 1 or h.n < 2:
                    raise ConfigurationError(f"spectral head needs >= 2 blocks, got {h.shape}")
                self.heads["spectral"] = SpectralJigsawHead(d, h.n)
            elif h.kind == "mim":
                self.heads["mim"] = ReconstructionHead(d, enc_spec.bands)
            else:
                if len(h.shape) != 1 or h.shape[0] < 2:
                    raise ConfigurationError("segmentation head needs num_classes >= 2")
                self.heads["segmentation"] = SegmentationHead(d, h.shape[0])

    # -- bookkeeping -------------------------------------------------------

    def components(self) -> dict[str, nn.Module]:
        return {"encoder": self.encoder, **dict(self.heads.items())}

    def parameter_count(self, component: str | None = None, trainable_only: bool = False) -> int:
        mods = [self] if component is None else [self.components()[component]]
        return sum(p.numel() for m in mods for p in m.parameters() if p.requires_grad or not trainable_only)

    def check_budget(self):
        total = self.parameter_count()
        if total > self.enc_spec.budget:
            raise ConfigurationError(f"model has {total} parameters, over the {self.enc_spec.budget} budget")
        return total

    def _check_input(self, x):
        if tuple(x.shape[1:]) != (self.enc_spec.bands, self.enc_spec.height, self.enc_spec.width):
            raise ShapeError(
                f"input (C, H, W) {tuple(x.shape[1:])} does not match encoder "
                f"{(self.enc_spec.bands, self.enc_spec.height, self.enc_spec.width)}"
            )

    def encode(self, x):
        x = _channels_first(x)
        self._check_input(x)
        return self.encoder(x)

    # -- task forwards -----------------------------------------------------

    def forward_spatial(self, x):
        return self.heads["spatial"](self.encode(x))

    def forward_spectral(self, x):
        return self.heads["spectral"](self.encode(x))

    def forward_mim(self, x):
        return self.heads["mim"](self.encode(x)).permute(0, 2, 3, 1)

    def forward_segmentation(self, x):
        return self.heads["segmentation"](self.encode(x)).permute(0, 2, 3, 1)

    def forward_pretext(self, spa=None, spe=None, vis=None):
        """Run the encoder once over the concatenated task inputs and route slices to their heads."""
        parts = [(k, _channels_first(v)) for k, v in (("spatial", spa), ("spectral", spe), ("mim", vis)) if v is not None]
        if not parts:
            return {}
        x = torch.cat([v for _, v in parts])
        self._check_input(x)
        feat = self.encoder(x)
        out, start = {}, 0
        for key, v in parts:
            f = feat[start:start + v.shape[0]]
            start += v.shape[0]
            y = self.heads[key](f)
            out[key] = y.permute(0, 2, 3, 1) if key == "mim" else y
        return out

    def forward(self, x):
        return self.forward_segmentation(x)

    # -- configuration -----------------------------------------------------

    def spec_dict(self) -> dict:
        return {
            "encoder": asdict(self.enc_spec),
            "heads": [{"kind": h.kind, "shape": list(h.shape)} for h in self.head_specs.values()],
        }

    def with_segmentation_head(self, num_classes: int, seed: int = 0) -> "MultiTaskModel":
        """Copy of this model with a fresh segmentation head (pretext heads dropped)."""
        heads = [HeadSpec("segmentation", (num_classes,))]
        new = MultiTaskModel(self.enc_spec, heads, encoder=_clone_module(self.encoder))
        gen = torch.Generator().manual_seed(int(seed) + 7919)
        _init_fan_in_uniform(new.heads["segmentation"], gen)
        return new


def _clone_module(m: nn.Module) -> nn.Module:
    import copy

    return copy.deepcopy(m)


def default_heads(enc: EncoderSpec, spatial_patch=(8, 8), spectral_blocks=4) -> list[HeadSpec]:
    return [
        HeadSpec("spatial", (enc.height // spatial_patch[0], enc.width // spatial_patch[1])),
        HeadSpec("spectral", (spectral_blocks,)),
        HeadSpec("mim"),
    ]


def build_model(enc: EncoderSpec, heads: list[HeadSpec], seed: int = 0, encoder: nn.Module | None = None,
                check_budget: bool = True) -> MultiTaskModel:
    """Deterministically initialised model; each component draws from its own seeded stream."""
    model = MultiTaskModel(enc, heads, encoder=encoder)
    for offset, (name, mod) in enumerate(sorted(model.components().items())):
        if name == "encoder" and encoder is not None:
            continue
        # segmentation head init depends on seed only, so scratch and pretrained runs share it
        stream = 7919 if name == "segmentation" else 101 * (offset + 1)
        _init_fan_in_uniform(mod, torch.Generator().manual_seed(int(seed) + stream))
    if check_budget:
        model.check_budget()
    return model


# -- checkpoints ------------------------------------------------------------


def save_checkpoint(model: MultiTaskModel, path, config: dict | None = None, extra: dict | None = None) -> Path:
    """One ``.npz`` archive: ``<component>/<param>`` tensors, model spec, config snapshot, schema version."""
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_name(path.name + ".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for comp, mod in model.components().items():
        for name, t in mod.state_dict().items():
            arrays[f"{comp}/{name}"] = t.detach().cpu().numpy()
    meta = {"schema_version": SCHEMA_VERSION, "model": model.spec_dict(), "config": config or {}, "extra": extra or {}}
    arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def resolve_checkpoint(path) -> Path:
    path = Path(path)
    candidates = [path, path.with_name(path.name + ".npz")]
    if path.is_dir():
        stages = sorted(path.glob("stage-*.npz"), key=lambda p: int(p.stem.split("-")[1]))
        candidates = ([path / "model.npz"] + stages[-1:]) + candidates
    for c in candidates:
        if c.is_file():
            return c
    raise FileNotFoundError(f"no checkpoint at {path}")


def load_checkpoint(path) -> tuple[MultiTaskModel, dict]:
    path = resolve_checkpoint(path)
    with np.load(path) as z:
        if "__meta__" not in z:
            raise FormatError(f"{path} is not a model checkpoint")
        meta = json.loads(z["__meta__"].tobytes().decode())
        if meta.get("schema_version") != SCHEMA_VERSION:
            raise FormatError(f"{path}: unsupported schema version {meta.get('schema_version')}")
        spec = meta["model"]
        enc = EncoderSpec(**spec["encoder"])
        heads = [HeadSpec(h["kind"], tuple(h["shape"])) for h in spec["heads"]]
        model = MultiTaskModel(enc, heads)
        for comp, mod in model.components().items():
            state = {k.split("/", 1)[1]: torch.from_numpy(z[k].copy()) for k in z.files if k.startswith(comp + "/")}
            mod.load_state_dict(state)
    return model, meta
