"""Overall accuracy, average accuracy and Cohen's kappa from pixel confusion matrices."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .data import IGNORE_ID
from .errors import DataError, DegenerateInputError, ShapeError

METRICS = ("oa", "aa", "kappa")


@dataclass
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions."""

    counts: np.ndarray
    ignore_id: int = IGNORE_ID

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise ShapeError(f"confusion matrix must be square, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise DataError("confusion counts must be nonnegative")

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.ignore_id)


def confusion(pred, truth, num_classes: int, ignore_id: int = IGNORE_ID) -> ConfusionMatrix:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    keep = truth != ignore_id
    for name, arr in (("truth", truth[keep]), ("prediction", pred[keep])):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise DataError(f"{name} class id outside [0, {num_classes})")
    cm = ConfusionMatrix(kernels.confusion_counts(truth, pred, ignore_id, num_classes), ignore_id)
    if cm.total == 0:
        warnings.warn("every pixel is ignored; confusion matrix is empty", RuntimeWarning, stacklevel=2)
    return cm


@dataclass
class MetricReport:
    oa: float
    aa: float
    kappa: float
    per_class_accuracy: list[float | None] = field(default_factory=list)
    seeds: int = 1
    std: dict[str, float] = field(default_factory=lambda: {m: 0.0 for m in METRICS})

    def to_dict(self, per_class: bool = True, percent: bool = False) -> dict:
        scale = 100.0 if percent else 1.0
        out = {
            "oa": self.oa * scale,
            "aa": self.aa * scale,
            "kappa": self.kappa * scale,
            "seeds": self.seeds,
            "std": {k: v * scale for k, v in self.std.items()},
        }
        if per_class:
            out["per_class_accuracy"] = [None if a is None else a * scale for a in self.per_class_accuracy]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(
            oa=d["oa"], aa=d["aa"], kappa=d["kappa"],
            per_class_accuracy=list(d.get("per_class_accuracy", [])),
            seeds=d.get("seeds", 1),
            std=dict(d.get("std", {m: 0.0 for m in METRICS})),
        )

    def row(self) -> str:
        """``mean +- std`` cells in percent, the layout of the comparison tables."""
        return "  ".join(f"{100 * getattr(self, m):6.2f}±{100 * self.std[m]:5.2f}" for m in ("aa", "oa", "kappa"))


def metrics(cm: ConfusionMatrix) -> MetricReport:
    """OA, AA over classes with nonzero support, and kappa.

    When chance agreement is 1 (a single class everywhere) kappa is reported
    as 1 if OA is 1, else 0.
    """
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total == 0:
        raise DegenerateInputError("no labelled pixels; metrics undefined")
    diag = np.diag(counts)
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    oa = float(diag.sum() / total)
    per_class = [float(diag[i] / rows[i]) if rows[i] > 0 else None for i in range(cm.num_classes)]
    supported = [a for a in per_class if a is not None]
    aa = float(np.mean(supported))
    pe = float((rows * cols).sum() / (total * total))
    if pe >= 1.0:
        kappa = 1.0 if oa == 1.0 else 0.0
    else:
        kappa = (oa - pe) / (1.0 - pe)
    return MetricReport(oa=oa, aa=aa, kappa=float(kappa), per_class_accuracy=per_class)


def aggregate_runs(reports: list[MetricReport]) -> MetricReport:
    """Mean and sample standard deviation of each metric across runs."""
    if not reports:
        raise DegenerateInputError("no reports to aggregate")
    out = {}
    std = {}
    for m in METRICS:
        vals = np.array([getattr(r, m) for r in reports], dtype=np.float64)
        out[m] = float(vals.mean())
        std[m] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    n_cls = max(len(r.per_class_accuracy) for r in reports)
    per_class = []
    for i in range(n_cls):
        vals = [r.per_class_accuracy[i] for r in reports
                if i < len(r.per_class_accuracy) and r.per_class_accuracy[i] is not None]
        per_class.append(float(np.mean(vals)) if vals else None)
    return MetricReport(out["oa"], out["aa"], out["kappa"], per_class, seeds=sum(r.seeds for r in reports), std=std)
