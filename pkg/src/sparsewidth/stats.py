"""Single-pass mean/variance accumulation for Monte Carlo estimators.

Welford's update, extended with the pairwise combination rule so that
partitioned sampling (one accumulator per worker) merges to the same
moments regardless of how the samples were split.
"""

from __future__ import annotations

import math

import numpy as np


class RunningMoments:
    """Streaming count/mean/M2 with a stable merge."""

    __slots__ = ("count", "mean", "_m2")

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self._m2 = 0.0

    def push(self, x: float) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self._m2 += delta * (x - self.mean)

    def push_many(self, xs) -> None:
        xs = np.asarray(xs, dtype=np.float64).ravel()
        if xs.size == 0:
            return
        other = RunningMoments()
        other.count = int(xs.size)
        other.mean = float(xs.mean())
        other._m2 = float(((xs - other.mean) ** 2).sum())
        self.merge(other)

    def merge(self, other: "RunningMoments") -> "RunningMoments":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self._m2 = other.count, other.mean, other._m2
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / n
        self._m2 += other._m2 + delta * delta * self.count * other.count / n
        self.count = n
        return self

    @property
    def variance(self) -> float:
        """Unbiased sample variance (0.0 until two samples arrive)."""
        if self.count < 2:
            return 0.0
        return self._m2 / (self.count - 1)

    @property
    def stderr(self) -> float:
        """Standard error of the mean."""
        if self.count < 2:
            return 0.0
        return math.sqrt(self.variance / self.count)
