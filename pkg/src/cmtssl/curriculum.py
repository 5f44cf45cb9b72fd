"""Cumulative easy-to-hard curriculum batches with a geometric epoch schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class CurriculumSchedule:
    N: int
    S: int = 3
    K: int = 32
    F: float = 1.5

    def __post_init__(self):
        if self.S < 1:
            raise ConfigurationError(f"S must be >= 1, got {self.S}")
        if self.S > self.N:
            raise ConfigurationError(f"S={self.S} curriculum batches exceed dataset size N={self.N}")
        if self.K < 1:
            raise ConfigurationError(f"K must be >= 1, got {self.K}")
        if not self.F > 0:
            raise ConfigurationError(f"F must be > 0, got {self.F}")

    @property
    def sizes(self) -> list[int]:
        return [self.N * k // self.S for k in range(1, self.S + 1)]

    @property
    def epochs(self) -> list[int]:
        return [epoch_count(self.K, self.F, k) for k in range(1, self.S + 1)]

    def batches(self) -> list["CurriculumBatch"]:
        return [
            CurriculumBatch(k, tuple(range(r)), e)
            for k, (r, e) in enumerate(zip(self.sizes, self.epochs), start=1)
        ]


@dataclass(frozen=True)
class CurriculumBatch:
    index: int
    cube_ids: tuple[int, ...]
    epochs: int

    @property
    def size(self) -> int:
        return len(self.cube_ids)


def epoch_count(K: int, F: float, k: int) -> int:
    """round-half-up of K * F**(k-1), never below 1."""
    # Decimal of the float product avoids banker's rounding and 2.5 -> 2 surprises
    value = Decimal(repr(K * F ** (k - 1))).quantize(Decimal(1), rounding=ROUND_HALF_UP)
    return max(1, int(value))


def build_schedule(N: int, S: int, K: int, F: float) -> list[CurriculumBatch]:
    return CurriculumSchedule(N, S, K, F).batches()


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def match_budget(schedule: CurriculumSchedule, batch_size: int) -> int:
    """Optimizer steps consumed by the curriculum run: sum of E_k * ceil(R_k / B)."""
    if batch_size < 1:
        raise ConfigurationError("batch_size must be >= 1")
    return sum(e * steps_per_epoch(r, batch_size) for r, e in zip(schedule.sizes, schedule.epochs))


def baseline_epochs(schedule: CurriculumSchedule, batch_size: int) -> int:
    """Full-dataset epoch count whose step total is closest to the curriculum budget."""
    budget = match_budget(schedule, batch_size)
    per_epoch = steps_per_epoch(schedule.N, batch_size)
    return max(1, int(Decimal(budget / per_epoch).quantize(Decimal(1), rounding=ROUND_HALF_UP)))


def mini_batches(indices, batch_size: int, rng: np.random.Generator):
    """Uniformly shuffled mini-batches over ``indices`` (last one may be short)."""
    order = np.asarray(indices)[rng.permutation(len(indices))]
    for start in range(0, len(order), batch_size):
        yield order[start:start + batch_size]


def format_plan(schedule: CurriculumSchedule, batch_size: int | None = None) -> str:
    lines = ["stage  size  epochs" + ("  steps" if batch_size else "")]
    for k, (r, e) in enumerate(zip(schedule.sizes, schedule.epochs), start=1):
        row = f"{k:>5}  {r:>4}  {e:>6}"
        if batch_size:
            row += f"  {e * steps_per_epoch(r, batch_size):>5}"
        lines.append(row)
    lines.append(f"sizes: {schedule.sizes}")
    lines.append(f"epochs: {schedule.epochs}")
    if batch_size:
        lines.append(f"total steps (B={batch_size}): {match_budget(schedule, batch_size)}")
    return "\n".join(lines)
