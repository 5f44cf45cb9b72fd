"""Synthetic labelled hyperspectral scenes with controllable texture (difficulty) levels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .data import Scene
from .errors import ConfigurationError


@dataclass
class SyntheticSpec:
    height: int = 128
    width: int = 128
    bands: int = 32
    num_classes: int = 3
    # None -> 4 regions per class
    num_regions: int | None = None
    prototypes: np.ndarray | None = None
    prototype_margin: float = 1.0
    # a scalar, or one amplitude per region (cycled)
    texture_amplitude: float | list[float] = 0.5
    texture_sigma: float = 1.5
    noise_std: float = 0.05
    seed: int = 0
    name: str = "synthetic"
    wavelengths: tuple[float, float] = field(default=(400.0, 1000.0))

    def __post_init__(self):
        if min(self.height, self.width, self.bands) < 1:
            raise ConfigurationError("scene dims must be positive")
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be >= 1")
        amps = np.atleast_1d(np.asarray(self.texture_amplitude, dtype=np.float64))
        if (amps < 0).any():
            raise ConfigurationError("texture amplitude must be >= 0")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be >= 0")

    @property
    def amplitudes(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.texture_amplitude, dtype=np.float64))


def _smooth_spectrum(rng: np.random.Generator, bands: int, order: int = 3) -> np.ndarray:
    lam = np.linspace(0.0, 1.0, bands)
    out = np.full(bands, rng.uniform(0.5, 1.5))
    for k in range(1, order + 1):
        out += rng.normal(0.0, 1.0 / k) * np.cos(np.pi * k * lam + rng.uniform(0, 2 * np.pi))
    return out


def random_prototypes(num_classes: int, bands: int, rng: np.random.Generator, margin: float = 1.0,
                      attempts: int = 200) -> np.ndarray:
    """Low-order cosine-mixture spectra, redrawn until every pair is at least ``margin`` apart (L2)."""
    protos: list[np.ndarray] = []
    for _ in range(attempts * max(num_classes, 1)):
        cand = _smooth_spectrum(rng, bands)
        if all(np.linalg.norm(cand - p) >= margin for p in protos):
            protos.append(cand)
            if len(protos) == num_classes:
                return np.stack(protos)
    raise ConfigurationError(f"could not draw {num_classes} prototypes with pairwise margin {margin}")


def _voronoi_regions(h: int, w: int, n: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.column_stack([rng.uniform(0, h, n), rng.uniform(0, w, n)])
    yy, xx = np.mgrid[0:h, 0:w]
    d = (yy[..., None] - centers[:, 0]) ** 2 + (xx[..., None] - centers[:, 1]) ** 2
    return d.argmin(axis=-1)


def _texture_field(rng: np.random.Generator, h: int, w: int, sigma: float) -> np.ndarray:
    t = gaussian_filter(rng.standard_normal((h, w)), sigma=sigma, mode="wrap") if sigma > 0 else rng.standard_normal((h, w))
    s = t.std()
    return t / s if s > 0 else t


def generate_scene(spec: SyntheticSpec) -> Scene:
    """Voronoi-partitioned scene: class prototype + band-correlated texture + white noise per pixel."""
    rng = np.random.default_rng(spec.seed)
    if spec.prototypes is not None:
        protos = np.asarray(spec.prototypes, dtype=np.float64)
        if protos.ndim != 2 or protos.shape[1] != spec.bands:
            raise ConfigurationError(f"prototypes must be (classes, {spec.bands})")
        if protos.shape[0] < spec.num_classes:
            raise ConfigurationError(f"{protos.shape[0]} prototypes for {spec.num_classes} classes")
    else:
        protos = random_prototypes(spec.num_classes, spec.bands, rng, spec.prototype_margin)

    h, w, c = spec.height, spec.width, spec.bands
    n_regions = spec.num_regions or 4 * spec.num_classes
    regions = _voronoi_regions(h, w, max(n_regions, spec.num_classes), rng)
    region_class = np.arange(regions.max() + 1) % spec.num_classes
    rng.shuffle(region_class)
    labels = region_class[regions]

    amps = spec.amplitudes
    amp_map = amps[regions % len(amps)]

    # two spatial texture modes, each loading a smooth spectral profile
    tex = np.zeros((h, w, c))
    for _ in range(2):
        loading = _smooth_spectrum(rng, c)
        loading /= np.sqrt(np.mean(loading ** 2))
        tex += _texture_field(rng, h, w, spec.texture_sigma)[..., None] * loading / np.sqrt(2.0)

    pixels = protos[labels] + amp_map[..., None] * tex + spec.noise_std * rng.standard_normal((h, w, c))
    wl = np.linspace(spec.wavelengths[0], spec.wavelengths[1], c)
    return Scene(pixels=pixels.astype(np.float32), name=spec.name, label_map=labels.astype(np.int64),
                 wavelengths=[float(x) for x in wl])
