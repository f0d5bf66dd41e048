"""Domain types shared across the toolkit.

Timestamps are kept as integer deci-seconds ("ticks") so the 0.1 s cadence
test is an exact integer comparison.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

TICKS_PER_SECOND = 10


def seconds_to_ticks(t: float) -> int:
    return int(round(float(t) * TICKS_PER_SECOND))


def ticks_to_seconds(ticks):
    return np.asarray(ticks, dtype=np.int64) / TICKS_PER_SECOND


@dataclass(frozen=True)
class Sample:
    tick: int
    values: tuple[float, ...]

    @property
    def t(self) -> float:
        return self.tick / TICKS_PER_SECOND

    @property
    def d(self) -> int:
        return len(self.values)

    @classmethod
    def at(cls, t: float, values: Sequence[float]) -> "Sample":
        vals = tuple(float(v) for v in values)
        if not vals:
            raise ValueError("sample needs at least one value")
        if not all(np.isfinite(vals)):
            raise ValueError(f"non-finite sample value in {vals}")
        return cls(seconds_to_ticks(t), vals)


@dataclass(frozen=True, eq=False)
class Trip:
    """One vehicle journey: ``ticks`` (N,) int64 and ``values`` (N, d) float64."""

    vehicle_id: str
    ticks: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ticks = np.ascontiguousarray(self.ticks, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[1] < 1:
            raise ValueError("values must be (N, d) with d >= 1")
        if len(ticks) != len(values):
            raise ValueError(f"{len(ticks)} ticks but {len(values)} value rows")
        if len(ticks) < 2:
            raise ValueError("a trip needs at least 2 samples")
        if np.any(np.diff(ticks) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("trip contains non-finite values")
        ticks.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "ticks", ticks)
        object.__setattr__(self, "values", values)

    @property
    def N(self) -> int:
        return len(self.ticks)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def t(self) -> np.ndarray:
        return ticks_to_seconds(self.ticks)

    def sample(self, i: int) -> Sample:
        """0-based access to one sample."""
        return Sample(int(self.ticks[i]), tuple(float(v) for v in self.values[i]))

    def samples(self):
        for i in range(self.N):
            yield self.sample(i)

    def with_values(self, values) -> "Trip":
        return Trip(self.vehicle_id, self.ticks, values)

    def __eq__(self, other):
        if not isinstance(other, Trip):
            return NotImplemented
        return (
            self.vehicle_id == other.vehicle_id
            and np.array_equal(self.ticks, other.ticks)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"Trip({self.vehicle_id!r}, N={self.N}, d={self.d})"


@dataclass(frozen=True)
class ThresholdConfig:
    epsilons: tuple[float, ...]
    max_segment_length: int

    def __post_init__(self):
        eps = tuple(float(e) for e in np.atleast_1d(self.epsilons))
        if not eps or any(not (e > 0) for e in eps):
            raise ValueError(f"all thresholds must be > 0, got {eps}")
        k = int(self.max_segment_length)
        if k != self.max_segment_length or k < 2:
            raise ValueError(f"max segment length must be an integer >= 2, got {self.max_segment_length}")
        object.__setattr__(self, "epsilons", eps)
        object.__setattr__(self, "max_segment_length", k)

    @property
    def K(self) -> int:
        return self.max_segment_length

    @property
    def d(self) -> int:
        return len(self.epsilons)


@dataclass(frozen=True, eq=False)
class Transmission:
    """The samples an encoder emitted for one trip.

    ``indices`` are 1-based positions in the original trip; ``ticks`` and
    ``values`` are the payload rows for those positions.
    """

    indices: np.ndarray
    ticks: np.ndarray
    values: np.ndarray
    N: int
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64)
        ticks = np.ascontiguousarray(self.ticks, dtype=np.int64)
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(len(idx), -1) if len(idx) else values.reshape(0, 1)
        if not (len(idx) == len(ticks) == len(values)):
            raise ValueError("indices, ticks and values must have equal length")
        if len(idx) and np.any(np.diff(idx) <= 0):
            raise ValueError("indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "ticks", ticks)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "N", int(self.N))

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def collection_ratio(self) -> float:
        return len(self.indices) / self.N

    def __len__(self):
        return len(self.indices)

    def __eq__(self, other):
        if not isinstance(other, Transmission):
            return NotImplemented
        return (
            self.N == other.N
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.ticks, other.ticks)
            and np.array_equal(self.values, other.values)
        )

    @classmethod
    def from_trip(cls, trip: Trip, indices, **meta) -> "Transmission":
        idx = np.asarray(indices, dtype=np.int64)
        return cls(idx, trip.ticks[idx - 1], trip.values[idx - 1], trip.N, dict(meta))
