"""Exact reference computations used to check the approximate engine.

Everything here is brute force on purpose and shares no traversal code with
:mod:`vecjoin.join`. Distances are recomputed with a plain
subtract-square-sum rather than the engine's kernel.
"""
from __future__ import annotations

import heapq
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import VectorStore, check_same_dimension
from .errors import ConfigurationError, FormatError, VersionError

TRUTH_MAGIC = b"VJGT"
TRUTH_VERSION = 1
RNG_SIZE_LIMIT = 2000

_TRUTH_HEADER = struct.Struct("<4sIfQ")
_TRUTH_PAIR = np.dtype([("q", "<u4"), ("d", "<u4"), ("dist", "<f4")])


def _dists(x: np.ndarray, rows: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum((rows - x) ** 2, axis=1))


@dataclass
class GroundTruth:
    """Complete and sound set of pairs ``(query, data, distance)`` with
    ``distance < theta``, in query-major then data-id order."""

    theta: float
    pairs: list = field(default_factory=list)

    def pair_keys(self) -> set:
        return {(q, d) for q, d, _ in self.pairs}

    def __len__(self) -> int:
        return len(self.pairs)


def nlj_exact(queries: VectorStore, data: VectorStore, theta: float,
              exclude_self: bool = False) -> GroundTruth:
    """Nested-loop join. ``exclude_self`` drops ``(i, i)`` for self-joins."""
    check_same_dimension(queries, data)
    if theta < 0:
        raise ConfigurationError("theta must be non-negative")
    Y = data.wide
    pairs = []
    for q in range(queries.count):
        d = _dists(queries.wide[q], Y)
        for j in np.flatnonzero(d < theta):
            j = int(j)
            if exclude_self and j == q:
                continue
            pairs.append((q, j, float(d[j])))
    return GroundTruth(float(theta), pairs)


def exact_topk(store: VectorStore, query_vector, k: int) -> list[int]:
    """Exact ``k`` nearest ids, ascending by distance, ties by id."""
    if not 0 <= k <= store.count:
        raise ConfigurationError(f"k must be in [0, {store.count}]")
    x = np.asarray(query_vector, dtype=np.float64)
    d = _dists(x, store.wide)
    order = np.lexsort((np.arange(store.count), d))
    return [int(i) for i in order[:k]]


def pairwise_distances(store: VectorStore) -> np.ndarray:
    X = store.wide
    return np.sqrt(np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=2))


def exact_rng_edges(store: VectorStore) -> set[tuple[int, int]]:
    """Undirected relative-neighborhood-graph edges ``(u, v)`` with ``u < v``.

    ``u``-``v`` is an edge iff no ``w`` has both ``dist(u, w)`` and
    ``dist(v, w)`` strictly below ``dist(u, v)``.
    """
    n = store.count
    if n > RNG_SIZE_LIMIT:
        raise ConfigurationError(f"exact RNG is O(n^3); refusing n={n} > {RNG_SIZE_LIMIT}")
    D = pairwise_distances(store)
    edges = set()
    for u in range(n):
        # lune_max[v, w] = max(d(u, w), d(v, w))
        lune_max = np.maximum(D[u][None, :], D)
        blocked = (lune_max < D[u][:, None]).any(axis=1)
        for v in range(u + 1, n):
            if not blocked[v]:
                edges.add((u, v))
    return edges


def mst_reference(edges, node_count: int) -> tuple[float, list[int]]:
    """Kruskal MST over ``(u, v, weight)`` edges.

    Returns total weight and a parent array rooted at node 0 (root's parent
    is -1). Ties are broken by ``(weight, min id, max id)``.
    """
    if node_count == 0:
        return 0.0, []
    parent = list(range(node_count))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    norm = sorted((float(w), min(u, v), max(u, v)) for u, v, w in edges if u != v)
    total = 0.0
    tree = [[] for _ in range(node_count)]
    used = 0
    for w, u, v in norm:
        ru, rv = find(u), find(v)
        if ru == rv:
            continue
        parent[ru] = rv
        total += w
        tree[u].append(v)
        tree[v].append(u)
        used += 1
    if used != node_count - 1:
        raise ConfigurationError("input graph is disconnected")
    up = [-1] * node_count
    seen = [False] * node_count
    seen[0] = True
    stack = [0]
    while stack:
        a = stack.pop()
        for b in tree[a]:
            if not seen[b]:
                seen[b] = True
                up[b] = a
                stack.append(b)
    return total, up


def heap_topk(store: VectorStore, query_vector, k: int) -> list[int]:
    """Second top-k route (bounded heap) used to cross-check :func:`exact_topk`."""
    x = np.asarray(query_vector, dtype=np.float64)
    heap = []
    for i in range(store.count):
        diff = store.wide[i] - x
        d = float(np.sqrt(np.dot(diff, diff)))
        item = (-d, -i)
        if len(heap) < k:
            heapq.heappush(heap, item)
        elif item > heap[0]:
            heapq.heapreplace(heap, item)
    return [-i for _, i in sorted(heap, reverse=True)]


# --- ground-truth file -------------------------------------------------------

def truth_to_bytes(truth: GroundTruth) -> bytes:
    buf = io.BytesIO()
    buf.write(_TRUTH_HEADER.pack(TRUTH_MAGIC, TRUTH_VERSION, truth.theta, len(truth.pairs)))
    rec = np.zeros(len(truth.pairs), dtype=_TRUTH_PAIR)
    if truth.pairs:
        q, d, dist = zip(*truth.pairs)
        rec["q"], rec["d"], rec["dist"] = q, d, dist
    buf.write(rec.tobytes())
    return buf.getvalue()


def truth_from_bytes(raw: bytes) -> GroundTruth:
    if len(raw) < 4 or raw[:4] != TRUTH_MAGIC:
        raise VersionError("not a ground-truth file (bad magic bytes)")
    if len(raw) < _TRUTH_HEADER.size:
        raise FormatError("truncated ground-truth header")
    _, version, theta, count = _TRUTH_HEADER.unpack_from(raw, 0)
    if version != TRUTH_VERSION:
        raise VersionError(f"unsupported ground-truth version {version}")
    expected = _TRUTH_HEADER.size + count * _TRUTH_PAIR.itemsize
    if len(raw) != expected:
        raise FormatError(f"ground-truth payload is {len(raw)} bytes, expected {expected}")
    rec = np.frombuffer(raw, dtype=_TRUTH_PAIR, offset=_TRUTH_HEADER.size, count=count)
    pairs = [(int(q), int(d), float(x)) for q, d, x in rec]
    return GroundTruth(float(theta), pairs)


def save_truth(truth: GroundTruth, path) -> None:
    with open(path, "wb") as f:
        f.write(truth_to_bytes(truth))


def load_truth(path) -> GroundTruth:
    with open(path, "rb") as f:
        return truth_from_bytes(f.read())
