"""Vector storage, the Euclidean distance kernel and run instrumentation.

All distances are plain (un-squared) Euclidean distances computed from
float32 storage with float64 accumulation. The same kernel is used by every
join algorithm so that results are reproducible bit for bit.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigurationError

# distance accumulation width, fixed project-wide
ACCUM_DTYPE = np.float64


class VectorStore:
    """Immutable, contiguous collection of fixed-dimension float32 vectors.

    Vector ids are row positions: ``0 <= id < len(store)``.
    """

    __slots__ = ("_data", "_wide")

    def __init__(self, data):
        arr = np.array(data, dtype=np.float32, order="C", copy=True)
        if arr.ndim == 1 and arr.size:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ConfigurationError(f"expected a 2-D array of vectors, got shape {arr.shape}")
        if arr.shape[1] == 0:
            raise ConfigurationError("vector dimension must be positive")
        arr.setflags(write=False)
        self._data = arr
        wide = arr.astype(ACCUM_DTYPE)
        wide.setflags(write=False)
        self._wide = wide

    @classmethod
    def empty(cls, dimension: int) -> "VectorStore":
        return cls(np.zeros((0, dimension), dtype=np.float32))

    @property
    def data(self) -> np.ndarray:
        """Read-only ``(count, dimension)`` float32 array."""
        return self._data

    @property
    def wide(self) -> np.ndarray:
        """Read-only float64 copy used by the distance kernel."""
        return self._wide

    @property
    def dimension(self) -> int:
        return int(self._data.shape[1])

    @property
    def count(self) -> int:
        return int(self._data.shape[0])

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i) -> np.ndarray:
        return self._data[i]

    def __repr__(self) -> str:
        return f"VectorStore(count={self.count}, dimension={self.dimension})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, VectorStore):
            return NotImplemented
        return self._data.shape == other._data.shape and np.array_equal(self._data, other._data)

    __hash__ = None

    def concat(self, other: "VectorStore") -> "VectorStore":
        """New store with ``self`` rows first, then ``other`` rows."""
        check_same_dimension(self, other)
        return VectorStore(np.concatenate([self._data, other._data], axis=0))

    def centroid(self) -> np.ndarray:
        return self._wide.mean(axis=0)


def check_same_dimension(a: VectorStore, b: VectorStore) -> None:
    if a.dimension != b.dimension:
        raise ConfigurationError(
            f"dimension mismatch: {a.dimension} vs {b.dimension}"
        )


@dataclass
class Counters:
    """Instrumentation for one join run (or one query within it).

    Times are in seconds.
    """

    distance_computations: int = 0
    greedy_pops: int = 0
    bfs_pops: int = 0
    hybrid_evictions: int = 0
    cache_entries: int = 0
    greedy_time: float = 0.0
    bfs_time: float = 0.0
    other_time: float = 0.0

    def add(self, other: "Counters") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    @property
    def total_time(self) -> float:
        return self.greedy_time + self.bfs_time + self.other_time

    @classmethod
    def total(cls, parts) -> "Counters":
        out = cls()
        for p in parts:
            out.add(p)
        return out


def distances_to(x: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Euclidean distances from one float64 vector ``x`` to each row of ``rows``.

    ``rows`` must already be float64. This is the single kernel behind every
    distance reported by the join engine.
    """
    diff = rows - x
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def distance(store_a: VectorStore, a: int, store_b: VectorStore, b: int,
             counters: Counters | None = None) -> float:
    """Euclidean distance between ``store_a[a]`` and ``store_b[b]``."""
    check_same_dimension(store_a, store_b)
    if counters is not None:
        counters.distance_computations += 1
    return float(distances_to(store_a.wide[a], store_b.wide[b:b + 1])[0])


def threshold_check(d: float, theta: float) -> bool:
    """Join predicate: strictly closer than ``theta``."""
    if theta < 0:
        raise ConfigurationError("theta must be non-negative")
    return d < theta


class PhaseTimer:
    """Accumulates wall-clock time into a named Counters field."""

    __slots__ = ("counters", "field", "_t0")

    def __init__(self, counters: Counters, field: str):
        self.counters = counters
        self.field = field

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        dt = time.perf_counter() - self._t0
        setattr(self.counters, self.field, getattr(self.counters, self.field) + dt)
        return False
