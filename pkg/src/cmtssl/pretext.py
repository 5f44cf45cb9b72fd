"""Self-supervised task generators: spatial jigsaw, spectral jigsaw and 3D patch masking.

All generators take an H x W x C array (or a ``DataCube``) and a numpy
``Generator``; output is a pure function of the cube and the generator state.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .data import DataCube
from .errors import ConfigurationError, ShapeError


@dataclass(frozen=True)
class SpatialJigsawConfig:
    patch_h: int = 8
    patch_w: int = 8

    def grid(self, h: int, w: int) -> tuple[int, int]:
        if self.patch_h < 1 or self.patch_w < 1:
            raise ConfigurationError("spatial jigsaw patch dims must be positive")
        if h % self.patch_h or w % self.patch_w:
            raise ConfigurationError(f"{self.patch_h}x{self.patch_w} patches do not tile a {h}x{w} cube")
        if self.patch_h >= h or self.patch_w >= w:
            raise ConfigurationError(f"spatial jigsaw patches must be smaller than the {h}x{w} cube")
        return h // self.patch_h, w // self.patch_w

    def n_patches(self, h: int, w: int) -> int:
        gh, gw = self.grid(h, w)
        return gh * gw


@dataclass(frozen=True)
class SpectralJigsawConfig:
    blocks: int = 4

    def block_depth(self, c: int) -> int:
        if self.blocks < 2:
            raise ConfigurationError("spectral jigsaw needs at least 2 blocks")
        if c % self.blocks:
            raise ConfigurationError(f"{c} bands cannot be cut into {self.blocks} equal blocks")
        return c // self.blocks

    def n_patches(self, c: int) -> int:
        self.block_depth(c)
        return self.blocks


@dataclass(frozen=True)
class MaskingConfig:
    patch_h: int = 8
    patch_w: int = 8
    # None -> C // 4 bands per patch
    patch_c: int | None = None
    ratio: float = 0.6

    def patch_dims(self, h: int, w: int, c: int) -> tuple[int, int, int]:
        pc = self.patch_c if self.patch_c is not None else max(1, c // 4)
        if min(self.patch_h, self.patch_w, pc) < 1:
            raise ConfigurationError("mask patch dims must be positive")
        if h % self.patch_h or w % self.patch_w or c % pc:
            raise ConfigurationError(f"{self.patch_h}x{self.patch_w}x{pc} patches do not tile {h}x{w}x{c}")
        return self.patch_h, self.patch_w, pc

    def total_patches(self, h: int, w: int, c: int) -> int:
        ph, pw, pc = self.patch_dims(h, w, c)
        return (h // ph) * (w // pw) * (c // pc)

    def n_masked(self, h: int, w: int, c: int) -> int:
        if not 0.0 < self.ratio < 1.0:
            raise ConfigurationError(f"mask ratio must lie in (0, 1), got {self.ratio}")
        total = self.total_patches(h, w, c)
        if total < 2:
            raise ConfigurationError("masking needs at least 2 patches")
        m = int(Decimal(repr(self.ratio * total)).quantize(Decimal(1), rounding=ROUND_HALF_UP))
        return min(max(m, 1), total - 1)


@dataclass
class JigsawSample:
    shuffled: np.ndarray
    permutation: np.ndarray
    target: np.ndarray

    @property
    def n(self) -> int:
        return len(self.permutation)


@dataclass
class MaskedSample:
    visible: np.ndarray
    mask: np.ndarray
    target: np.ndarray
    patches: np.ndarray

    def reassemble(self) -> np.ndarray:
        out = self.visible.copy()
        out[self.mask] = self.target
        return out


def _values(cube) -> np.ndarray:
    v = cube.values if isinstance(cube, DataCube) else np.asarray(cube)
    if v.ndim != 3:
        raise ShapeError(f"expected an H x W x C cube, got shape {v.shape}")
    return v


def permutation_target(perm) -> np.ndarray:
    """Flattened permutation matrix: entry ``i*N + j`` is 1 when slot ``i`` holds original patch ``j``."""
    perm = np.asarray(perm)
    n = len(perm)
    t = np.zeros((n, n), dtype=np.float32)
    t[np.arange(n), perm] = 1.0
    return t.ravel()


def _to_patches(v: np.ndarray, gh: int, gw: int) -> np.ndarray:
    h, w, c = v.shape
    ph, pw = h // gh, w // gw
    return v.reshape(gh, ph, gw, pw, c).transpose(0, 2, 1, 3, 4).reshape(gh * gw, ph, pw, c)


def _from_patches(p: np.ndarray, gh: int, gw: int) -> np.ndarray:
    _, ph, pw, c = p.shape
    return p.reshape(gh, gw, ph, pw, c).transpose(0, 2, 1, 3, 4).reshape(gh * ph, gw * pw, c)


def apply_spatial_permutation(cube, perm, cfg: SpatialJigsawConfig) -> np.ndarray:
    """Slot ``i`` (row-major) of the output receives original patch ``perm[i]``."""
    v = _values(cube)
    gh, gw = cfg.grid(v.shape[0], v.shape[1])
    return _from_patches(_to_patches(v, gh, gw)[np.asarray(perm)], gh, gw)


def apply_spectral_permutation(cube, perm, cfg: SpectralJigsawConfig) -> np.ndarray:
    v = _values(cube)
    d = cfg.block_depth(v.shape[2])
    h, w, c = v.shape
    blocks = v.reshape(h, w, cfg.blocks, d)
    return blocks[:, :, np.asarray(perm), :].reshape(h, w, c)


def inverse_permutation(perm) -> np.ndarray:
    perm = np.asarray(perm)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return inv


def spatial_jigsaw(cube, cfg: SpatialJigsawConfig, rng: np.random.Generator, perm=None) -> JigsawSample:
    v = _values(cube)
    n = cfg.n_patches(v.shape[0], v.shape[1])
    perm = rng.permutation(n) if perm is None else np.asarray(perm)
    return JigsawSample(apply_spatial_permutation(v, perm, cfg), perm, permutation_target(perm))


def spectral_jigsaw(cube, cfg: SpectralJigsawConfig, rng: np.random.Generator, perm=None) -> JigsawSample:
    v = _values(cube)
    n = cfg.n_patches(v.shape[2])
    perm = rng.permutation(n) if perm is None else np.asarray(perm)
    return JigsawSample(apply_spectral_permutation(v, perm, cfg), perm, permutation_target(perm))


def patch_mask(shape, cfg: MaskingConfig, patches) -> np.ndarray:
    """Voxel mask for the given flat patch indices (patch grid in h, w, c row-major order)."""
    h, w, c = shape
    ph, pw, pc = cfg.patch_dims(h, w, c)
    grid = np.zeros((h // ph) * (w // pw) * (c // pc), dtype=bool)
    grid[np.asarray(patches, dtype=np.int64)] = True
    grid = grid.reshape(h // ph, w // pw, c // pc)
    return np.repeat(np.repeat(np.repeat(grid, ph, axis=0), pw, axis=1), pc, axis=2)


def mask_cube(cube, cfg: MaskingConfig, rng: np.random.Generator) -> MaskedSample:
    v = _values(cube)
    m = cfg.n_masked(*v.shape)
    total = cfg.total_patches(*v.shape)
    patches = np.sort(rng.choice(total, size=m, replace=False))
    mask = patch_mask(v.shape, cfg, patches)
    visible = np.where(mask, np.zeros((), dtype=v.dtype), v)
    return MaskedSample(visible, mask, v[mask].copy(), patches)


def decode_permutation(logits) -> np.ndarray:
    """Greedy one-to-one assignment on an N x N score matrix (row = slot, column = origin)."""
    logits = np.asarray(logits, dtype=np.float64).ravel()
    n = int(round(np.sqrt(len(logits))))
    if n * n != len(logits):
        raise ShapeError(f"{len(logits)} logits do not form a square matrix")
    scores = logits.reshape(n, n)
    perm = np.full(n, -1, dtype=np.int64)
    used_rows = np.zeros(n, dtype=bool)
    used_cols = np.zeros(n, dtype=bool)
    # stable order keeps ties deterministic: lower flat index first
    for flat in np.argsort(-scores, axis=None, kind="stable"):
        i, j = divmod(int(flat), n)
        if used_rows[i] or used_cols[j]:
            continue
        perm[i] = j
        used_rows[i] = used_cols[j] = True
    return perm


def cube_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator keyed on (seed, stage, epoch, cube index, ...), independent of visit order."""
    return np.random.default_rng([int(seed), *(int(k) for k in keys)])
