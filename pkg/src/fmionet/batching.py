"""Batch sampling over reservoir cases and time snapshots."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class BatchSpec:
    batch_case: int = 4
    batch_time: int = 8

    def __post_init__(self):
        if self.batch_case < 1 or self.batch_time < 1:
            raise ValueError("batch sizes must be >= 1")

    def clamped(self, n_seen: int) -> "BatchSpec":
        return BatchSpec(self.batch_case, min(self.batch_time, n_seen))


class EpochSampler:
    """Yields (case_indices, time_indices) pairs, one per training step.

    Cases follow a fresh shuffled partition each epoch. Time chunks hold
    ``batch_time`` distinct seen indices drawn without replacement from a
    cycling shuffled pool, so over an epoch every seen index is visited with
    equal frequency (up to one).
    """

    def __init__(self, n_cases: int, seen_indices, spec: BatchSpec,
                 rng: np.random.Generator):
        if n_cases < 1:
            raise ValueError("dataset is empty")
        seen = tuple(int(i) for i in seen_indices)
        if not seen:
            raise ValueError("no seen time indices")
        if spec.batch_time > len(seen):
            raise ValueError(f"batch_time {spec.batch_time} exceeds the "
                             f"{len(seen)} seen snapshots")
        self.n_cases = n_cases
        self.seen = seen
        self.spec = spec
        self.rng = rng
        self._pool: list[int] = []

    def _time_chunk(self) -> np.ndarray:
        chunk: list[int] = []
        while len(chunk) < self.spec.batch_time:
            if not self._pool:
                self._pool = list(self.rng.permutation(self.seen))
            picked = False
            for i, t in enumerate(self._pool):
                if t not in chunk:
                    chunk.append(self._pool.pop(i))
                    picked = True
                    break
            if not picked:
                # remainder of the pool duplicates the chunk; start a fresh
                # permutation (leftovers stay queued, keeping counts even)
                self._pool = list(self.rng.permutation(self.seen)) + self._pool
        return np.array(chunk)

    def epoch(self):
        order = self.rng.permutation(self.n_cases)
        for start in range(0, self.n_cases, self.spec.batch_case):
            cases = order[start:start + self.spec.batch_case]
            yield cases, self._time_chunk()

    def steps_per_epoch(self) -> int:
        return -(-self.n_cases // self.spec.batch_case)
