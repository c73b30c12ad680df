"""Proximity graph construction over a vector set.

The build is an exact kNN candidate pool followed by occlusion pruning (the
relative-neighborhood lune rule applied nearest-first against the neighbors
already kept), entry-point selection and a connectivity repair pass. The same
pipeline builds a merged graph over queries and data, tagging every node with
its role.
"""
from __future__ import annotations

import enum
import io
import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import VectorStore, check_same_dimension, distances_to
from .errors import ConfigurationError, FormatError, VersionError

DEFAULT_MAX_DEGREE = 70
DEFAULT_KNN = 100

INDEX_MAGIC = b"VJIX"
INDEX_VERSION = 1

_BLOCK = 512


class NodeRole(enum.IntEnum):
    QUERY = 0
    DATA = 1


@dataclass(frozen=True)
class IndexBuildParams:
    k_nn: int = DEFAULT_KNN
    max_degree: int = DEFAULT_MAX_DEGREE
    connectivity_repair: bool = True

    def __post_init__(self):
        if self.max_degree < 1 or self.k_nn < self.max_degree:
            raise ConfigurationError(
                f"need 1 <= max_degree <= k_nn, got max_degree={self.max_degree}, k_nn={self.k_nn}"
            )


class ProximityGraph:
    """Directed adjacency lists with an entry point, node roles and the
    per-node mean distance to data-role neighbors.

    ``adjacency[u]`` is an int64 array of out-neighbors in insertion order.
    """

    def __init__(self, adjacency, entry_point: int, roles=None, avg_data_neighbor_dist=None):
        adjacency = [np.asarray(a, dtype=np.int64) for a in adjacency]
        n = len(adjacency)
        if n and not 0 <= entry_point < n:
            raise ConfigurationError(f"entry point {entry_point} out of range for {n} nodes")
        self.adjacency = adjacency
        self.entry_point = int(entry_point)
        if roles is None:
            roles = np.full(n, NodeRole.DATA, dtype=np.uint8)
        self.roles = np.asarray(roles, dtype=np.uint8)
        if avg_data_neighbor_dist is None:
            avg_data_neighbor_dist = np.zeros(n, dtype=np.float32)
        self.avg_data_neighbor_dist = np.asarray(avg_data_neighbor_dist, dtype=np.float32)
        if self.roles.shape != (n,) or self.avg_data_neighbor_dist.shape != (n,):
            raise ConfigurationError("roles / stats length must equal node count")

    @property
    def node_count(self) -> int:
        return len(self.adjacency)

    def __len__(self) -> int:
        return len(self.adjacency)

    def neighbors(self, u: int) -> np.ndarray:
        return self.adjacency[u]

    def degrees(self) -> np.ndarray:
        return np.fromiter((len(a) for a in self.adjacency), dtype=np.int64, count=len(self.adjacency))

    @property
    def is_data(self) -> np.ndarray:
        return self.roles == NodeRole.DATA

    @property
    def has_mixed_roles(self) -> bool:
        return bool(len(self.roles)) and self.roles.min() != self.roles.max()

    def edge_count(self) -> int:
        return int(self.degrees().sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProximityGraph):
            return NotImplemented
        return (
            self.entry_point == other.entry_point
            and self.node_count == other.node_count
            and np.array_equal(self.roles, other.roles)
            and np.array_equal(self.avg_data_neighbor_dist, other.avg_data_neighbor_dist)
            and all(np.array_equal(a, b) for a, b in zip(self.adjacency, other.adjacency))
        )

    __hash__ = None

    def __repr__(self) -> str:
        return (f"ProximityGraph(nodes={self.node_count}, edges={self.edge_count()}, "
                f"entry_point={self.entry_point})")


def build_knn_candidates(store: VectorStore, k_nn: int) -> list[np.ndarray]:
    """Exact ``k_nn`` nearest other nodes per node, ascending by distance,
    ties by smaller id.

    Rows are pre-selected blockwise with the dot-product expansion, then the
    survivors are re-ranked with the exact kernel. The pre-selection keeps a
    margin so rounding in the expansion cannot change the final order.
    """
    n = store.count
    if n < 2:
        raise ConfigurationError("need at least 2 vectors to build kNN candidates")
    if not 1 <= k_nn < n:
        raise ConfigurationError(f"k_nn must be in [1, {n - 1}], got {k_nn}")
    X = store.wide
    sq = np.einsum("ij,ij->i", X, X)
    keep = min(n, k_nn + 1 + 16)
    out = []
    for start in range(0, n, _BLOCK):
        stop = min(n, start + _BLOCK)
        approx = sq[start:stop, None] + sq[None, :] - 2.0 * (X[start:stop] @ X.T)
        if keep < n:
            pool = np.argpartition(approx, keep - 1, axis=1)[:, :keep]
        else:
            pool = np.broadcast_to(np.arange(n), (stop - start, n))
        for row, u in enumerate(range(start, stop)):
            ids = pool[row]
            ids = ids[ids != u]
            d = distances_to(X[u], X[ids])
            order = np.lexsort((ids, d))[:k_nn]
            out.append(ids[order].astype(np.int64))
    return out


def _prune_sorted(ids: np.ndarray, du: np.ndarray, wide: np.ndarray, max_degree: int) -> np.ndarray:
    # occ[i, j]: kept candidate i would occlude candidate j
    sub = wide[ids]
    sq = np.einsum("ij,ij->i", sub, sub)
    cc = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * (sub @ sub.T), 0.0))
    # exact recomputation only where the decision could flip
    close = np.abs(cc - du[None, :]) <= 1e-6 * (1.0 + du[None, :])
    if close.any():
        ii, jj = np.nonzero(close)
        diff = sub[ii] - sub[jj]
        cc[ii, jj] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    occ = (du[:, None] < du[None, :]) & (cc < du[None, :])
    occluded = np.zeros(len(ids), dtype=bool)
    kept = []
    for j in range(len(ids)):
        if occluded[j]:
            continue
        kept.append(j)
        if len(kept) >= max_degree:
            break
        occluded |= occ[j]
    return ids[kept]


def rng_prune(store: VectorStore, u: int, candidates, max_degree: int) -> list[int]:
    """Occlusion pruning of ``u``'s candidate list.

    Candidates are scanned nearest first; ``v`` is kept unless an already
    kept ``w`` has ``dist(u, w) < dist(u, v)`` and ``dist(v, w) < dist(v, u)``.
    Scanning stops once ``max_degree`` neighbors are kept.
    """
    ids = np.asarray(candidates, dtype=np.int64)
    if ids.size == 0 or max_degree <= 0:
        return []
    du = distances_to(store.wide[u], store.wide[ids])
    return [int(v) for v in _prune_sorted(ids, du, store.wide, max_degree)]


def choose_entry_point(store: VectorStore) -> int:
    """Id of the vector nearest to the store centroid, ties by smaller id."""
    if store.count == 0:
        raise ConfigurationError("cannot choose an entry point for an empty store")
    d = distances_to(store.centroid(), store.wide)
    return int(np.argmin(d))


def _reachable(adjacency, start: int, seen: np.ndarray) -> None:
    seen[start] = True
    todo = deque([start])
    while todo:
        u = todo.popleft()
        for v in adjacency[u]:
            if not seen[v]:
                seen[v] = True
                todo.append(v)


def _closest_pair(store: VectorStore, targets: np.ndarray, sources: np.ndarray) -> tuple[int, int]:
    """``(target, source)`` minimizing their distance; ties by target then source id."""
    wide = store.wide
    best = (np.inf, -1, -1)
    for start in range(0, len(targets), _BLOCK):
        block = targets[start:start + _BLOCK]
        for t in block:
            d = distances_to(wide[t], wide[sources])
            i = int(np.argmin(d))
            cand = (float(d[i]), int(t), int(sources[i]))
            if cand < best:
                best = cand
    return best[1], best[2]


def repair_connectivity(graph: ProximityGraph, store: VectorStore) -> ProximityGraph:
    """Make every node reachable from the entry point.

    While nodes remain unreached, the unreached node closest to any reached
    node gets one incoming edge from that reached node, and reachability is
    extended from it. Ties go to smaller ids. Repair edges may push a node
    past the degree cap.
    """
    n = graph.node_count
    if n <= 1:
        return graph
    adjacency = list(graph.adjacency)
    seen = np.zeros(n, dtype=bool)
    _reachable(adjacency, graph.entry_point, seen)
    if seen.all():
        return graph
    while not seen.all():
        u, src = _closest_pair(store, np.flatnonzero(~seen), np.flatnonzero(seen))
        adjacency[src] = np.append(adjacency[src], u)
        _reachable(adjacency, u, seen)
    return ProximityGraph(adjacency, graph.entry_point, graph.roles, graph.avg_data_neighbor_dist)


def neighbor_stats(adjacency, store: VectorStore, roles: np.ndarray) -> np.ndarray:
    """Mean distance from each node to its data-role neighbors (0 if none).

    In a single-role graph every neighbor counts.
    """
    mixed = roles.min() != roles.max() if len(roles) else False
    out = np.zeros(len(adjacency), dtype=np.float32)
    wide = store.wide
    for u, nbrs in enumerate(adjacency):
        if mixed:
            nbrs = nbrs[roles[nbrs] == NodeRole.DATA]
        if len(nbrs):
            out[u] = distances_to(wide[u], wide[nbrs]).mean()
    return out


def _build(store: VectorStore, params: IndexBuildParams, roles: np.ndarray,
           entry_point: int | None) -> ProximityGraph:
    n = store.count
    if n == 0:
        raise ConfigurationError("cannot build an index over an empty store")
    if n == 1:
        return ProximityGraph([np.empty(0, np.int64)], 0, roles, np.zeros(1, np.float32))
    k = min(params.k_nn, n - 1)
    cands = build_knn_candidates(store, k)
    wide = store.wide
    adjacency = []
    for u, ids in enumerate(cands):
        du = distances_to(wide[u], wide[ids])
        adjacency.append(_prune_sorted(ids, du, wide, params.max_degree))
    if entry_point is None:
        entry_point = choose_entry_point(store)
    graph = ProximityGraph(adjacency, entry_point, roles)
    if params.connectivity_repair:
        graph = repair_connectivity(graph, store)
    graph.avg_data_neighbor_dist = neighbor_stats(graph.adjacency, store, roles)
    return graph


def build_index(store: VectorStore, params: IndexBuildParams | None = None,
                role: NodeRole = NodeRole.DATA) -> ProximityGraph:
    """Single-set proximity graph; every node gets ``role``.

    ``k_nn`` is clamped to ``count - 1`` for small stores.
    """
    params = params or IndexBuildParams()
    roles = np.full(store.count, role, dtype=np.uint8)
    return _build(store, params, roles, None)


def build_merged_index(queries: VectorStore, data: VectorStore,
                       params: IndexBuildParams | None = None) -> ProximityGraph:
    """One graph over queries followed by data.

    Node ``i < len(queries)`` is query ``i``; node ``len(queries) + j`` is data
    vector ``j``. Pruning is role-blind; the entry point is picked among data
    nodes and neighbor statistics count data neighbors only.
    """
    check_same_dimension(queries, data)
    if data.count == 0:
        raise ConfigurationError("merged index needs at least one data vector")
    params = params or IndexBuildParams()
    union = queries.concat(data)
    roles = np.concatenate([
        np.full(queries.count, NodeRole.QUERY, dtype=np.uint8),
        np.full(data.count, NodeRole.DATA, dtype=np.uint8),
    ])
    entry = queries.count + choose_entry_point(data)
    return _build(union, params, roles, entry)


def degree_mode(graph: ProximityGraph) -> int:
    """Most frequent out-degree, ties by smaller degree."""
    deg = graph.degrees()
    if deg.size == 0:
        return 0
    return int(np.argmax(np.bincount(deg)))


def degree_histogram(graph: ProximityGraph) -> dict[int, int]:
    counts = np.bincount(graph.degrees())
    return {d: int(c) for d, c in enumerate(counts) if c}


# --- serialization -----------------------------------------------------------

_HEADER = struct.Struct("<4sIIIIB")


def index_to_bytes(graph: ProximityGraph, dimension: int) -> bytes:
    has_roles = bool(len(graph.roles)) and bool((graph.roles != NodeRole.DATA).any())
    buf = io.BytesIO()
    buf.write(_HEADER.pack(INDEX_MAGIC, INDEX_VERSION, graph.node_count, dimension,
                           graph.entry_point, int(has_roles)))
    for u, nbrs in enumerate(graph.adjacency):
        if has_roles:
            buf.write(struct.pack("<B", int(graph.roles[u])))
        buf.write(struct.pack("<fI", float(graph.avg_data_neighbor_dist[u]), len(nbrs)))
        buf.write(np.asarray(nbrs, dtype="<u4").tobytes())
    return buf.getvalue()


def index_from_bytes(raw: bytes) -> tuple[ProximityGraph, int]:
    """Parse an index file; returns ``(graph, dimension)``."""
    if len(raw) < 4 or raw[:4] != INDEX_MAGIC:
        raise VersionError("not an index file (bad magic bytes)")
    if len(raw) < _HEADER.size:
        raise FormatError("truncated index header")
    _, version, n, dim, entry, has_roles = _HEADER.unpack_from(raw, 0)
    if version != INDEX_VERSION:
        raise VersionError(f"unsupported index version {version}")
    if has_roles not in (0, 1):
        raise FormatError(f"bad has_roles flag {has_roles}")
    if n and entry >= n:
        raise FormatError(f"entry point {entry} out of range")
    pos = _HEADER.size
    rec = 9 if has_roles else 8
    # reject impossible node counts before allocating per-node arrays
    if n * rec > len(raw) - pos:
        raise FormatError(f"node count {n} does not fit in a {len(raw)}-byte file")
    roles = np.full(n, NodeRole.DATA, dtype=np.uint8)
    stats = np.zeros(n, dtype=np.float32)
    adjacency = []
    for u in range(n):
        if pos + rec > len(raw):
            raise FormatError(f"truncated index file at node {u}")
        if has_roles:
            roles[u] = raw[pos]
            if roles[u] > NodeRole.DATA:
                raise FormatError(f"bad role byte at node {u}")
            pos += 1
        stats[u], deg = struct.unpack_from("<fI", raw, pos)
        pos += 8
        end = pos + 4 * deg
        if end > len(raw):
            raise FormatError(f"truncated adjacency list at node {u}")
        nbrs = np.frombuffer(raw, dtype="<u4", count=deg, offset=pos).astype(np.int64)
        if deg and nbrs.max() >= n:
            raise FormatError(f"neighbor id out of range at node {u}")
        adjacency.append(nbrs)
        pos = end
    if pos != len(raw):
        raise FormatError(f"{len(raw) - pos} trailing bytes after index payload")
    return ProximityGraph(adjacency, entry, roles, stats), dim


def save_index(graph: ProximityGraph, path, dimension: int) -> None:
    with open(path, "wb") as f:
        f.write(index_to_bytes(graph, dimension))


def load_index(path, store: VectorStore | None = None) -> ProximityGraph:
    """Load an index; when ``store`` is given, its count and dimension must match."""
    with open(path, "rb") as f:
        graph, dim = index_from_bytes(f.read())
    if store is not None and (store.count != graph.node_count or store.dimension != dim):
        raise ConfigurationError(
            f"index ({graph.node_count} x {dim}) does not match store "
            f"({store.count} x {store.dimension})"
        )
    return graph
