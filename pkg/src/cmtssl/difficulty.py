"""Gradient-magnitude difficulty scores and their correlation with task losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from ._kernels_py import gradient_fields as _fields
from .data import DataCube
from .errors import DegenerateInputError, ShapeError

AGGREGATIONS = ("average", "maximum", "std")


@dataclass(frozen=True)
class GradientKernels:
    kx: np.ndarray
    ky: np.ndarray
    kz: np.ndarray

    @classmethod
    def scharr(cls) -> "GradientKernels":
        kx = np.array([[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]])
        return cls(kx=kx, ky=kx.T.copy(), kz=np.array([1.0, -1.0]))


SCHARR = GradientKernels.scharr()


@dataclass(frozen=True)
class DifficultyScore:
    cube_id: str
    value: float
    aggregation: str = "average"


@dataclass(frozen=True)
class CorrelationReport:
    aggregation: str
    task: str
    pearson_r: float
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "aggregation": self.aggregation,
            "task": self.task,
            "pearson_r": self.pearson_r,
            "sample_count": self.sample_count,
        }


def _values(cube) -> np.ndarray:
    v = cube.values if isinstance(cube, DataCube) else cube
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 3:
        raise ShapeError(f"expected an H x W x C cube, got shape {v.shape}")
    h, w, c = v.shape
    if h < 3 or w < 3 or c < 2:
        raise ShapeError(f"cube {v.shape} is smaller than the 3x3x2 gradient support")
    return v


def gradient_fields(cube, kernels_: GradientKernels = SCHARR):
    """Spatial Scharr responses per band and the forward spectral difference.

    Spatial borders are replicate-padded and the last band's spectral
    difference is 0, so all three fields share the H x W x C grid.
    """
    v = _values(cube)
    if kernels_ is SCHARR:
        return _fields(v)
    from scipy.ndimage import convolve

    gx = np.stack([convolve(v[..., c], kernels_.kx, mode="nearest") for c in range(v.shape[2])], axis=-1)
    gy = np.stack([convolve(v[..., c], kernels_.ky, mode="nearest") for c in range(v.shape[2])], axis=-1)
    # (I * kz)[c + 1] = kz[0] I[c+1] + kz[1] I[c], stored at c; last band stays 0
    kz = np.asarray(kernels_.kz, dtype=np.float64)
    gz = np.zeros_like(v)
    gz[..., :-1] = kz[0] * v[..., 1:] + kz[1] * v[..., :-1]
    return gx, gy, gz


def difficulty(cube, aggregation: str = "average") -> float:
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    v = _values(cube)
    return float(kernels.batch_scores(v[None], aggregation)[0])


def score(cube: DataCube, aggregation: str = "average") -> DifficultyScore:
    return DifficultyScore(cube.cube_id, difficulty(cube, aggregation), aggregation)


def score_many(cubes: Sequence, aggregation: str = "average") -> np.ndarray:
    """Scores for a list of cubes (or an N x H x W x C stack) through the active kernel backend."""
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    if isinstance(cubes, np.ndarray):
        stack = cubes
    else:
        if len(cubes) == 0:
            return np.zeros(0)
        stack = np.stack([_values(c) for c in cubes])
    if stack.ndim != 4:
        raise ShapeError(f"expected N x H x W x C stack, got {stack.shape}")
    _values(stack[0])
    return kernels.batch_scores(stack, aggregation)


def sort_by_difficulty(cubes: Sequence, scores: Sequence[float] | None = None,
                       aggregation: str = "average") -> list[int]:
    """Indices of ``cubes`` in stable ascending score order."""
    if scores is None:
        scores = score_many(cubes, aggregation)
    return [int(i) for i in np.argsort(np.asarray(scores, dtype=np.float64), kind="stable")]


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ShapeError("pearson needs two equal-length 1-D sequences")
    if len(x) < 3:
        raise DegenerateInputError("pearson needs at least 3 samples")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("zero variance input; correlation undefined")
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def correlate_difficulty_with_loss(scores, losses, aggregation="average", task="mim") -> CorrelationReport:
    return CorrelationReport(aggregation, task, pearson(scores, losses), len(scores))
