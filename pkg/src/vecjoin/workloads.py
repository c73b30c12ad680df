"""Seeded synthetic workloads.

Generators
----------
GaussianClusters
    Mixture of Gaussian clusters; queries are fresh draws from the same
    mixture. Per-axis scales follow ``i ** -spectrum_decay`` (normalized so a
    cluster's RMS radius is 1), mimicking the decaying spectrum of real
    embedding sets. ``spectrum_decay = 0`` gives isotropic clusters.
UniformCube
    Data and queries uniform in ``[0, 1) ** dim``.
OodDisplaced
    Isotropic clusters of radius 1 in a row along axis 0, ``SEPARATION``
    apart. Each adjacent pair is linked only through a few "wall" points
    that sit below the pair (negative axis 1). Queries sit above the
    midpoint of a pair, ``ood_displacement`` radii up axis 1, so the data
    within reach of a query lies in two clusters with no in-range path
    between them.
SelfJoin
    GaussianClusters data joined with itself (queries are the data).
FileBacked
    Queries and data read from fvecs/bvecs files.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import VectorStore
from .errors import ConfigurationError
from .vecio import load_vectors

SEPARATION = 8.0
WALL_POINTS_PER_GAP = 3
CENTER_SPREAD = 2.0


class Generator(str, enum.Enum):
    GAUSSIAN_CLUSTERS = "GaussianClusters"
    UNIFORM_CUBE = "UniformCube"
    OOD_DISPLACED = "OodDisplaced"
    SELF_JOIN = "SelfJoin"
    FILE_BACKED = "FileBacked"

    @classmethod
    def parse(cls, name: str) -> "Generator":
        for g in cls:
            if name.strip().lower() in (g.value.lower(), g.name.lower()):
                return g
        raise ConfigurationError(f"unknown generator {name!r}")


@dataclass(frozen=True)
class WorkloadSpec:
    generator: Generator = Generator.GAUSSIAN_CLUSTERS
    dim: int = 16
    data_count: int = 10_000
    query_count: int = 1_000
    cluster_count: int = 10
    ood_displacement: float = 10.0
    rng_seed: int = 0
    spectrum_decay: float = 1.5
    queries_path: str = ""
    data_path: str = ""

    def __post_init__(self):
        if not isinstance(self.generator, Generator):
            object.__setattr__(self, "generator", Generator.parse(str(self.generator)))
        if self.generator is Generator.FILE_BACKED:
            if not self.data_path:
                raise ConfigurationError("FileBacked needs data_path")
            return
        if self.dim < 1 or self.data_count < 1 or self.query_count < 0:
            raise ConfigurationError("dim and data_count must be positive, query_count non-negative")
        if self.cluster_count < 1:
            raise ConfigurationError("cluster_count must be >= 1")
        if self.generator is Generator.OOD_DISPLACED:
            if self.dim < 2 or self.cluster_count < 2:
                raise ConfigurationError("OodDisplaced needs dim >= 2 and cluster_count >= 2")
            if self.data_count < self.cluster_count + WALL_POINTS_PER_GAP * (self.cluster_count - 1):
                raise ConfigurationError("data_count too small for the requested clusters")


def axis_scales(dim: int, decay: float) -> np.ndarray:
    """Per-axis standard deviations with unit RMS norm."""
    s = np.arange(1, dim + 1, dtype=np.float64) ** -decay
    return s / np.sqrt(np.sum(s ** 2))


def _gaussian(spec: WorkloadSpec, rng: np.random.Generator):
    s = axis_scales(spec.dim, spec.spectrum_decay)
    if spec.cluster_count == 1:
        centers = np.zeros((1, spec.dim))
    else:
        centers = rng.normal(size=(spec.cluster_count, spec.dim)) * s * CENTER_SPREAD

    def draw(n):
        which = rng.integers(0, spec.cluster_count, size=n)
        return centers[which] + rng.normal(size=(n, spec.dim)) * s

    data = draw(spec.data_count)
    return draw(spec.query_count), data


def ood_layout(spec: WorkloadSpec):
    """Cluster centers, wall anchors and query anchors for OodDisplaced."""
    k, dim = spec.cluster_count, spec.dim
    centers = np.zeros((k, dim))
    centers[:, 0] = SEPARATION * np.arange(k)
    mids = (centers[:-1] + centers[1:]) / 2
    walls = mids.copy()
    walls[:, 1] -= SEPARATION / 2
    anchors = mids.copy()
    anchors[:, 1] += spec.ood_displacement
    return centers, walls, anchors


def _ood(spec: WorkloadSpec, rng: np.random.Generator):
    centers, walls, anchors = ood_layout(spec)
    dim = spec.dim
    gaps = len(walls)
    n_wall = WALL_POINTS_PER_GAP * gaps
    sizes = np.full(spec.cluster_count, (spec.data_count - n_wall) // spec.cluster_count)
    sizes[: (spec.data_count - n_wall) % spec.cluster_count] += 1
    parts = [c + rng.normal(size=(n, dim)) / np.sqrt(dim) for c, n in zip(centers, sizes)]
    # wall points stay tight so they never come within reach of a query
    parts += [w + 0.1 * rng.normal(size=(WALL_POINTS_PER_GAP, dim)) / np.sqrt(dim) for w in walls]
    data = np.concatenate(parts)
    which = np.arange(spec.query_count) % gaps
    queries = anchors[which] + 0.25 * rng.normal(size=(spec.query_count, dim)) / np.sqrt(dim)
    return queries, data


def generate(spec: WorkloadSpec) -> tuple[VectorStore, VectorStore]:
    """Build ``(queries, data)``; identical specs give identical stores.

    For SelfJoin the same store object is returned twice.
    """
    g = spec.generator
    if g is Generator.FILE_BACKED:
        data = load_vectors(spec.data_path)
        queries = load_vectors(spec.queries_path) if spec.queries_path else data
        return queries, data
    rng = np.random.default_rng(spec.rng_seed)
    if g is Generator.GAUSSIAN_CLUSTERS:
        q, d = _gaussian(spec, rng)
    elif g is Generator.SELF_JOIN:
        _, d = _gaussian(spec, rng)
        store = VectorStore(d)
        return store, store
    elif g is Generator.UNIFORM_CUBE:
        d = rng.random((spec.data_count, spec.dim))
        q = rng.random((spec.query_count, spec.dim))
    else:
        q, d = _ood(spec, rng)
    return VectorStore(q), VectorStore(d)
