"""Hyperspectral scene ingest, region-based tiling and per-band normalization.

Scenes live on disk as a raw little-endian float32 payload (``<name>.hsr``,
row-major H x W x C) next to a JSON sidecar (``<name>.json``) declaring
``height``, ``width``, ``bands`` and optionally ``label_file``,
``wavelengths`` and ``ignore_id``. Labels are a raw int32 H x W payload.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DataError, FormatError, ShapeError

SPLITS = ("pretrain", "train", "validation", "test")
IGNORE_ID = -1
STD_EPS = 1e-12

FORMAT_ALIASES = {
    "raw-tensor-container": "raw",
    "raw": "raw",
    "hsr": "raw",
    "delimited-matrix": "csv",
    "csv": "csv",
}


@dataclass
class Scene:
    pixels: np.ndarray
    name: str = "scene"
    label_map: np.ndarray | None = None
    wavelengths: list[float] | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3 or min(self.pixels.shape) < 1:
            raise ShapeError(f"scene pixels must be H x W x C with all dims >= 1, got {self.pixels.shape}")
        bad = np.argwhere(~np.isfinite(self.pixels))
        if len(bad):
            raise DataError(f"non-finite value in scene {self.name!r} at index {tuple(int(i) for i in bad[0])}")
        if self.label_map is not None:
            self.label_map = np.asarray(self.label_map, dtype=np.int64)
            if self.label_map.shape != self.pixels.shape[:2]:
                raise ShapeError(
                    f"label map shape {self.label_map.shape} does not match scene {self.pixels.shape[:2]}"
                )

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def band_count(self) -> int:
        return self.pixels.shape[2]


@dataclass
class DataCube:
    values: np.ndarray
    origin: tuple[str, int, int]
    labels: np.ndarray | None = None

    @property
    def cube_id(self) -> str:
        name, row, col = self.origin
        return f"{name}:{row}:{col}"

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True)
class Region:
    """Half-open rectangle ``[y0, y1) x [x0, x1)`` in scene pixel coordinates."""

    x0: int
    y0: int
    x1: int
    y1: int
    split: str
    scene: str | None = None

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ConfigurationError(f"unknown split {self.split!r}; expected one of {SPLITS}")
        if self.x1 <= self.x0 or self.y1 <= self.y0:
            raise ConfigurationError(f"empty region {self}")

    def applies_to(self, scene_name: str) -> bool:
        return self.scene is None or self.scene == scene_name

    def intersects(self, other: "Region") -> bool:
        if self.scene is not None and other.scene is not None and self.scene != other.scene:
            return False
        return self.x0 < other.x1 and other.x0 < self.x1 and self.y0 < other.y1 and other.y0 < self.y1


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ShapeError("mean and std must be 1-D and of equal length")

    @property
    def divisor(self) -> np.ndarray:
        return np.where(self.std > STD_EPS, self.std, 1.0)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(d["mean"], d["std"])


@dataclass
class SplitSpec:
    tile_size: int = 16
    pretrain_stride: int = 8
    regions: list[Region] = field(default_factory=list)
    normalization_stats: NormStats | None = None

    def __post_init__(self):
        if self.tile_size < 1 or self.pretrain_stride < 1:
            raise ConfigurationError("tile_size and pretrain_stride must be positive")
        self.regions = [r if isinstance(r, Region) else Region(**r) for r in self.regions]
        for i, a in enumerate(self.regions):
            for b in self.regions[i + 1:]:
                if a.split != b.split and a.intersects(b):
                    raise ConfigurationError(f"regions overlap across splits: {a} and {b}")

    def regions_for(self, scene_name: str, split: str) -> list[Region]:
        wanted = ("pretrain", "train") if split == "pretrain" else (split,)
        return [r for r in self.regions if r.split in wanted and r.applies_to(scene_name)]

    @classmethod
    def whole_scene(cls, split: str, **kwargs) -> "SplitSpec":
        """One unbounded region (clipped to each scene) assigned to ``split``."""
        big = 1 << 30
        return cls(regions=[Region(0, 0, big, big, split)], **kwargs)

    @classmethod
    def column_strips(cls, width: int, fractions: dict[str, float], height: int, **kwargs) -> "SplitSpec":
        """Split a scene into vertical strips, left to right, in the order given."""
        regions, x = [], 0
        items = list(fractions.items())
        for k, (split, frac) in enumerate(items):
            x1 = width if k == len(items) - 1 else x + int(round(frac * width))
            if x1 > x:
                regions.append(Region(x, 0, x1, height, split))
            x = x1
        return cls(regions=regions, **kwargs)

    def to_dict(self) -> dict:
        out = {
            "tile_size": self.tile_size,
            "pretrain_stride": self.pretrain_stride,
            "regions": [
                {k: v for k, v in vars(r).items() if v is not None} for r in self.regions
            ],
        }
        if self.normalization_stats is not None:
            out["normalization_stats"] = self.normalization_stats.to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        stats = d.get("normalization_stats")
        return cls(
            tile_size=int(d.get("tile_size", 16)),
            pretrain_stride=int(d.get("pretrain_stride", 8)),
            regions=[Region(**r) for r in d.get("regions", [])],
            normalization_stats=NormStats.from_dict(stats) if stats else None,
        )


def load_split_spec(path) -> SplitSpec:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".toml":
        import tomli

        raw = tomli.loads(text)
    else:
        raw = json.loads(text)
    return SplitSpec.from_dict(raw)


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def _read_sidecar(path: Path) -> dict:
    side = _sidecar_path(path)
    if not side.exists():
        raise FormatError(f"missing sidecar {side}")
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed sidecar {side}: {exc}") from exc
    for key in ("height", "width", "bands"):
        v = meta.get(key)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise FormatError(f"sidecar {side} needs a positive integer {key!r}, got {v!r}")
    return meta


def load_scene(path, format: str = "raw-tensor-container") -> Scene:
    """Read a scene container; ``path`` may be the payload, the sidecar, or the bare stem."""
    try:
        fmt = FORMAT_ALIASES[format]
    except KeyError:
        raise FormatError(f"unknown scene format {format!r}") from None
    path = Path(path)
    payload = path.with_suffix(".hsr" if fmt == "raw" else ".csv")
    if not payload.exists():
        raise FormatError(f"missing scene payload {payload}")
    meta = _read_sidecar(payload)
    h, w, c = meta["height"], meta["width"], meta["bands"]

    if fmt == "raw":
        raw = payload.read_bytes()
        if len(raw) != h * w * c * 4:
            raise FormatError(f"{payload}: payload is {len(raw)} bytes, expected {h * w * c * 4} for {h}x{w}x{c}")
        pixels = np.frombuffer(raw, dtype="<f4").reshape(h, w, c)
    else:
        try:
            mat = np.loadtxt(payload, delimiter=",", dtype=np.float64, ndmin=2)
        except ValueError as exc:
            raise FormatError(f"{payload}: {exc}") from exc
        if mat.shape != (h * w, c):
            raise FormatError(f"{payload}: matrix is {mat.shape}, expected ({h * w}, {c})")
        pixels = mat.reshape(h, w, c)

    bad = np.argwhere(~np.isfinite(pixels))
    if len(bad):
        raise DataError(f"{payload}: non-finite value at index {tuple(int(i) for i in bad[0])}")

    labels = None
    if meta.get("label_file"):
        lpath = payload.parent / meta["label_file"]
        lraw = lpath.read_bytes()
        if len(lraw) != h * w * 4:
            raise FormatError(f"{lpath}: label payload is {len(lraw)} bytes, expected {h * w * 4}")
        labels = np.frombuffer(lraw, dtype="<i4").reshape(h, w).astype(np.int64)
        if (labels < 0).any():
            raise DataError(f"{lpath}: label ids must be nonnegative")
        ignore = meta.get("ignore_id")
        if ignore is not None:
            labels = np.where(labels == int(ignore), IGNORE_ID, labels)

    return Scene(pixels=pixels.copy(), name=meta.get("name", payload.stem), label_map=labels,
                 wavelengths=meta.get("wavelengths"))


def save_scene(scene: Scene, directory, format: str = "raw-tensor-container") -> Path:
    """Write ``scene`` as payload + sidecar (+ labels); returns the payload path."""
    fmt = FORMAT_ALIASES[format]
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"name": scene.name, "height": scene.height, "width": scene.width, "bands": scene.band_count}
    if scene.wavelengths is not None:
        meta["wavelengths"] = list(scene.wavelengths)
    if fmt == "raw":
        payload = directory / f"{scene.name}.hsr"
        payload.write_bytes(np.ascontiguousarray(scene.pixels, dtype="<f4").tobytes())
    else:
        payload = directory / f"{scene.name}.csv"
        np.savetxt(payload, scene.pixels.reshape(-1, scene.band_count), delimiter=",", fmt="%.9g")
    if scene.label_map is not None:
        labels = scene.label_map
        if (labels == IGNORE_ID).any():
            # on-disk ids are nonnegative; remap ignored pixels to a sentinel declared in the sidecar
            sentinel = int(labels.max()) + 1
            labels = np.where(labels == IGNORE_ID, sentinel, labels)
            meta["ignore_id"] = sentinel
        lname = f"{scene.name}.labels"
        (directory / lname).write_bytes(np.ascontiguousarray(labels, dtype="<i4").tobytes())
        meta["label_file"] = lname
    _sidecar_path(payload).write_text(json.dumps(meta, indent=2))
    return payload


def list_scenes(directory) -> list[Path]:
    """Sidecar-backed scene payloads in ``directory``, sorted by name."""
    directory = Path(directory)
    found = []
    for side in sorted(directory.glob("*.json")):
        for ext in (".hsr", ".csv"):
            if side.with_suffix(ext).exists():
                found.append(side.with_suffix(ext))
                break
    return found


def scene_format(path) -> str:
    return "delimited-matrix" if Path(path).suffix == ".csv" else "raw-tensor-container"


def tile_scene(scene: Scene, spec: SplitSpec, split: str) -> list[DataCube]:
    if split not in SPLITS:
        raise ConfigurationError(f"unknown split {split!r}")
    t = spec.tile_size
    if t > min(scene.height, scene.width):
        raise ShapeError(f"tile size {t} exceeds scene {scene.height}x{scene.width}")
    regions = spec.regions_for(scene.name, split)
    if not regions:
        raise ConfigurationError(f"no region of scene {scene.name!r} is assigned to split {split!r}")
    stride = spec.pretrain_stride if split == "pretrain" else t

    cubes, seen = [], set()
    for reg in regions:
        y0, x0 = max(reg.y0, 0), max(reg.x0, 0)
        y1, x1 = min(reg.y1, scene.height), min(reg.x1, scene.width)
        for r in range(y0, y1 - t + 1, stride):
            for c in range(x0, x1 - t + 1, stride):
                if (r, c) in seen:
                    continue
                seen.add((r, c))
                labels = None
                if scene.label_map is not None:
                    labels = scene.label_map[r:r + t, c:c + t].copy()
                cubes.append(DataCube(scene.pixels[r:r + t, c:c + t].copy(), (scene.name, r, c), labels))
    return cubes


def fit_normalizer(cubes: Sequence[DataCube]) -> NormStats:
    """Per-band population mean and std over every pixel of every cube (two passes)."""
    if not cubes:
        raise ShapeError("cannot fit a normalizer on an empty cube list")
    bands = {cube.values.shape[-1] for cube in cubes}
    if len(bands) != 1:
        raise ShapeError(f"cubes have mixed band counts {sorted(bands)}")
    c = bands.pop()
    total = np.zeros(c)
    count = 0
    for cube in cubes:
        v = cube.values.reshape(-1, c).astype(np.float64)
        total += v.sum(axis=0)
        count += v.shape[0]
    mean = total / count
    sq = np.zeros(c)
    for cube in cubes:
        d = cube.values.reshape(-1, c).astype(np.float64) - mean
        sq += (d * d).sum(axis=0)
    return NormStats(mean, np.sqrt(sq / count))


def normalize(cube: DataCube, stats: NormStats) -> DataCube:
    if stats.mean.shape[0] != cube.values.shape[-1]:
        raise ShapeError(f"stats for {stats.mean.shape[0]} bands applied to a {cube.values.shape[-1]}-band cube")
    out = (cube.values.astype(np.float64) - stats.mean) / stats.divisor
    return DataCube(out.astype(np.float32), cube.origin, cube.labels)


def denormalize(cube: DataCube, stats: NormStats) -> DataCube:
    out = cube.values.astype(np.float64) * stats.divisor + stats.mean
    return DataCube(out.astype(np.float32), cube.origin, cube.labels)


def stack_values(cubes: Iterable[DataCube]) -> np.ndarray:
    return np.stack([c.values for c in cubes]).astype(np.float32)


def stack_labels(cubes: Iterable[DataCube]) -> np.ndarray:
    return np.stack([c.labels for c in cubes]).astype(np.int64)


@dataclass
class PreparedData:
    """Normalized cubes per split plus the statistics used to normalize them."""

    splits: dict[str, list[DataCube]]
    stats: NormStats
    num_classes: int | None = None

    def __getitem__(self, split: str) -> list[DataCube]:
        return self.splits.get(split, [])


def prepare_splits(scenes: Sequence[Scene], spec: SplitSpec, stats: NormStats | None = None) -> PreparedData:
    """Tile every scene into all splits it has regions for and normalize with training statistics.

    Statistics come from the non-overlapping supervised training tiles; scenes
    with no training region (pretraining-only corpora) fall back to their
    pretraining tiles when nothing else is available.
    """
    splits: dict[str, list[DataCube]] = {s: [] for s in SPLITS}
    for scene in scenes:
        for split in SPLITS:
            if spec.regions_for(scene.name, split):
                splits[split].extend(tile_scene(scene, spec, split))
    if stats is None:
        stats = spec.normalization_stats
    if stats is None:
        basis = splits["train"] or splits["pretrain"]
        stats = fit_normalizer(basis)
    normed = {s: [normalize(c, stats) for c in cubes] for s, cubes in splits.items()}
    labels = [s.label_map for s in scenes if s.label_map is not None]
    num_classes = None
    if labels:
        num_classes = int(max(int(l.max()) for l in labels)) + 1
    return PreparedData(normed, stats, num_classes)
