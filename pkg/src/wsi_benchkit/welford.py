"""Streaming mean/variance accumulation with mergeable state.

The accumulator carries ``(count, mean, m2)`` where ``m2`` is the sum of
squared deviations from the running mean.  Batches are folded in with the
parallel-merge update (Chan et al.), so a stream may be processed in chunks
of any size and the result agrees with single-pass accumulation to floating
point noise.  Variance is the population variance ``m2 / count``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class WelfordAccumulator:
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, value: float) -> None:
        self.count += 1
        delta = value - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (value - self.mean)

    def add_batch(self, values: np.ndarray) -> None:
        """Fold in a chunk of values (summarised first, then merged)."""
        values = np.asarray(values, dtype=np.float64)
        n = values.size
        if n == 0:
            return
        mean = float(values.mean())
        m2 = float(((values - mean) ** 2).sum())
        self.merge(WelfordAccumulator(n, mean, m2))

    def merge(self, other: "WelfordAccumulator") -> None:
        if other.count == 0:
            return
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean, other.m2
            return
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / total
        self.m2 += other.m2 + delta * delta * self.count * other.count / total
        self.count = total

    def variance(self) -> float:
        if self.count == 0:
            raise ValueError("variance of empty accumulator")
        return self.m2 / self.count

    def std(self) -> float:
        return math.sqrt(max(self.variance(), 0.0))
