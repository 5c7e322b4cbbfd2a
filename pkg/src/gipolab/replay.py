"""Versioned FIFO replay buffer and staleness summaries."""

from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass

import numpy as np

DEFAULT_CAPACITY = 50_000
DEFAULT_T_OLD = 10_000


@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    reward: float
    next_state: int
    done: bool
    behavior_logprob: float
    behavior_version: int
    # episode cut by a time limit rather than reaching an absorbing state
    truncated: bool = False

    def __post_init__(self):
        if not math.isfinite(self.behavior_logprob):
            raise ValueError("behavior log-prob must be finite")
        if self.behavior_version < 0:
            raise ValueError("behavior version must be non-negative")


@dataclass(frozen=True)
class Batch:
    transitions: tuple
    version_gaps: np.ndarray
    indices: np.ndarray

    def __len__(self):
        return len(self.transitions)

    def column(self, name: str, dtype=float) -> np.ndarray:
        return np.array([getattr(t, name) for t in self.transitions], dtype=dtype)


class ReplayBuffer:
    """Ring buffer with strictly oldest-first eviction.

    Appends from many threads are serialized by a lock, and a sample copies
    references under the same lock, so it never sees a half-written slot.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._slots: list = [None] * capacity
        self._inserted = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return min(self._inserted, self.capacity)

    @property
    def inserted(self) -> int:
        return self._inserted

    def append(self, transition: Transition) -> None:
        with self._lock:
            self._slots[self._inserted % self.capacity] = transition
            self._inserted += 1

    def extend(self, transitions) -> None:
        with self._lock:
            for t in transitions:
                self._slots[self._inserted % self.capacity] = t
                self._inserted += 1

    def contents(self) -> list:
        """Current transitions, oldest first."""
        with self._lock:
            n = len(self)
            start = self._inserted - n
            return [self._slots[i % self.capacity] for i in range(start, self._inserted)]

    def sample_uniform(self, batch_size: int, learner_version: int, rng: np.random.Generator) -> Batch:
        """Uniform draw with replacement; version gaps computed now."""
        with self._lock:
            n = len(self)
            if n == 0:
                raise ValueError("cannot sample from an empty buffer")
            idx = rng.integers(0, n, size=batch_size)
            start = self._inserted - n
            items = tuple(self._slots[(start + i) % self.capacity] for i in idx)
        gaps = np.array([learner_version - t.behavior_version for t in items], dtype=np.int64)
        if np.any(gaps < 0):
            raise ValueError("transition version is ahead of the learner")
        return Batch(items, gaps, idx)

    # -- binary log ----------------------------------------------------------

    _RECORD = struct.Struct("<qqdq??dq")

    def dump(self, path) -> None:
        """Write contents as fixed-size little-endian records, oldest first."""
        with open(path, "wb") as fh:
            for t in self.contents():
                fh.write(
                    self._RECORD.pack(
                        t.state, t.action, t.reward, t.next_state, t.done, t.truncated,
                        t.behavior_logprob, t.behavior_version,
                    )
                )

    @classmethod
    def load(cls, path, capacity: int = DEFAULT_CAPACITY) -> "ReplayBuffer":
        buf = cls(capacity)
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) % cls._RECORD.size:
            raise ValueError("replay log has a partial record")
        for s, a, r, ns, d, tr, lp, v in cls._RECORD.iter_unpack(data):
            buf.append(Transition(s, a, r, ns, d, lp, v, tr))
        return buf


def nearest_rank_quantile(values, q: float) -> float:
    """ceil(q * n)-th order statistic (1-based)."""
    x = np.sort(np.asarray(values, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("quantile of an empty sample")
    k = max(1, math.ceil(q * x.size - 1e-12))
    return float(x[k - 1])


def staleness_summary(version_gaps, t_old: int = DEFAULT_T_OLD):
    """(OldFrac, OldGapP95) for a batch of version gaps."""
    gaps = np.asarray(version_gaps)
    if gaps.size == 0:
        raise ValueError("empty batch")
    return float(np.mean(gaps >= t_old)), nearest_rank_quantile(gaps, 0.95)
