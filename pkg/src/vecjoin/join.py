"""Threshold vector join over proximity graphs.

A join runs one single-query search per query vector. Each search has a
greedy phase that walks the data graph toward the query until it meets any
in-range point, and a BFS phase that enumerates the in-range points reachable
from there. On top of that sit:

* early stopping of the greedy phase once the best distance plateaus,
* work sharing along an MST over the queries, caching either a query's full
  result (hard) or only its closest visited point (soft) as seeds for its
  children,
* a merged query+data graph, where every query starts at its own node and
  the greedy phase disappears,
* a hybrid BFS/best-first traversal that may cross a bounded number of
  out-of-range nodes, used for queries predicted to be out of distribution.
"""
from __future__ import annotations

import bisect
import enum
import heapq
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import Counters, PhaseTimer, VectorStore, check_same_dimension, distances_to
from .errors import ConfigurationError
from .graph_index import NodeRole, ProximityGraph

SENTINEL = -1
DEFAULT_L = 256
DEFAULT_ES_PATIENCE = 10
DEFAULT_HYBRID_PATIENCE = 1
DEFAULT_OOD_FACTOR = 1.5


class MethodVariant(str, enum.Enum):
    NAIVE = "Naive"
    INDEX = "Index"
    ES = "ES"
    ES_HWS = "ES_HWS"
    ES_SWS = "ES_SWS"
    ES_MI = "ES_MI"
    ES_MI_ADAPT = "ES_MI_Adapt"

    @classmethod
    def parse(cls, name: str) -> "MethodVariant":
        for v in cls:
            if v.value.lower() == name.strip().lower() or v.name.lower() == name.strip().lower():
                return v
        raise ConfigurationError(f"unknown variant {name!r}; choose from {[v.value for v in cls]}")

    @property
    def uses_merged_index(self) -> bool:
        return self in (MethodVariant.ES_MI, MethodVariant.ES_MI_ADAPT)


class CachePolicy(enum.Enum):
    NONE = "none"
    HWS = "hws"
    SWS = "sws"


class HybridMode(str, enum.Enum):
    AUTO = "auto"
    BFS = "bfs"
    BBFS = "bbfs"

    @classmethod
    def parse(cls, name: str) -> "HybridMode":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ConfigurationError(f"unknown hybrid mode {name!r}; choose auto, bfs or bbfs") from None


@dataclass(frozen=True)
class JoinConfig:
    theta: float
    variant: MethodVariant = MethodVariant.ES_SWS
    max_queue: int = DEFAULT_L
    es_patience: int = DEFAULT_ES_PATIENCE
    hybrid_patience: int = DEFAULT_HYBRID_PATIENCE
    ood_factor: float = DEFAULT_OOD_FACTOR
    hybrid_force: HybridMode = HybridMode.AUTO

    def __post_init__(self):
        if isinstance(self.variant, str) and not isinstance(self.variant, MethodVariant):
            object.__setattr__(self, "variant", MethodVariant.parse(self.variant))
        if isinstance(self.hybrid_force, str) and not isinstance(self.hybrid_force, HybridMode):
            object.__setattr__(self, "hybrid_force", HybridMode.parse(self.hybrid_force))
        if not self.theta >= 0:
            raise ConfigurationError("theta must be >= 0")
        if self.max_queue < 1:
            raise ConfigurationError("max_queue (L) must be >= 1")
        if self.es_patience < 1 or self.hybrid_patience < 1:
            raise ConfigurationError("patience values must be >= 1")
        if not self.ood_factor > 0:
            raise ConfigurationError("ood_factor must be > 0")


@dataclass
class JoinIndexes:
    """Graphs a join may use. ``merged`` indexes queries first, then data."""

    data: ProximityGraph | None = None
    queries: ProximityGraph | None = None
    merged: ProximityGraph | None = None


@dataclass
class JoinOutcome:
    pairs: list  # (query id, data id, distance)
    counters: Counters
    per_query: list = field(default_factory=list)
    setup: Counters = field(default_factory=Counters)
    per_query_ood: list | None = None
    caches: list | None = None

    def pair_keys(self) -> set:
        return {(q, d) for q, d, _ in self.pairs}

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def ood_flagged(self) -> int:
        return sum(self.per_query_ood) if self.per_query_ood else 0


def recall(outcome, truth) -> float:
    """Fraction of ``truth``'s pairs present in ``outcome`` (1.0 for empty truth)."""
    want = truth.pair_keys()
    if not want:
        return 1.0
    return len(outcome.pair_keys() & want) / len(want)


# --- query ordering ----------------------------------------------------------

def order_queries(query_store: VectorStore, query_graph: ProximityGraph, seed_vector,
                  counters: Counters | None = None) -> list[tuple[int, int]]:
    """MST-based processing order for work sharing.

    The MST spans the undirected closure of ``query_graph`` plus a sentinel
    node joined to every query, weighted by the distance to ``seed_vector``
    (the data graph's entry vector). Prim's algorithm runs from the sentinel
    and queries are emitted in preorder as ``(query, parent)``, where parent
    is :data:`SENTINEL` for children of the root. Ties go to smaller ids.
    """
    m = query_store.count
    if m == 0:
        return []
    if query_graph.node_count != m:
        raise ConfigurationError("query index does not match the query store")
    Q = query_store.wide
    x_s = np.asarray(seed_vector, dtype=np.float64)
    if x_s.shape != (query_store.dimension,):
        raise ConfigurationError("seed vector dimension does not match queries")
    adj = [dict() for _ in range(m)]
    computed = 0
    for u in range(m):
        nbrs = query_graph.adjacency[u]
        if not len(nbrs):
            continue
        w = distances_to(Q[u], Q[nbrs])
        computed += len(nbrs)
        for v, d in zip(nbrs.tolist(), w.tolist()):
            if v == u:
                continue
            adj[u][v] = d
            adj[v].setdefault(u, d)
    root_w = distances_to(x_s, Q)
    computed += m
    if counters is not None:
        counters.distance_computations += computed

    in_tree = [False] * m
    parent = [SENTINEL] * m
    heap = [(float(root_w[q]), q, SENTINEL) for q in range(m)]
    heapq.heapify(heap)
    children = [[] for _ in range(m)]
    roots = []
    while heap:
        w, q, p = heapq.heappop(heap)
        if in_tree[q]:
            continue
        in_tree[q] = True
        parent[q] = p
        (roots if p == SENTINEL else children[p]).append(q)
        for v, d in adj[q].items():
            if not in_tree[v]:
                heapq.heappush(heap, (d, v, q))

    order = []
    stack = sorted(roots, reverse=True)
    while stack:
        q = stack.pop()
        order.append((q, parent[q]))
        stack.extend(sorted(children[q], reverse=True))
    return order


def order_weight(query_store: VectorStore, order, seed_vector) -> float:
    """Total edge weight of the tree described by ``order``."""
    x_s = np.asarray(seed_vector, dtype=np.float64)
    total = 0.0
    for q, p in order:
        other = x_s if p == SENTINEL else query_store.wide[p]
        total += float(distances_to(query_store.wide[q], other[None, :])[0])
    return total


# --- single-query search -----------------------------------------------------

class _Search:
    """State for one query's traversal over one graph.

    Node ids are graph node ids; ``offset`` converts data nodes of a merged
    graph back to data ids and ``is_data`` (None for a data-only graph)
    marks which nodes may produce pairs.
    """

    __slots__ = ("x", "vectors", "adj", "theta", "is_data", "offset", "exclude",
                 "visited", "closest_d", "closest", "counters", "pairs")

    def __init__(self, x, vectors, graph, theta, counters, is_data=None, offset=0, exclude=None):
        self.x = x
        self.vectors = vectors
        self.adj = graph.adjacency
        self.theta = theta
        self.is_data = is_data
        self.offset = offset
        self.exclude = exclude
        self.visited = np.zeros(len(vectors), dtype=bool)
        self.closest_d = math.inf
        self.closest = -1
        self.counters = counters
        self.pairs = []

    def measure(self, nodes: np.ndarray) -> np.ndarray:
        self.visited[nodes] = True
        self.counters.distance_computations += len(nodes)
        return distances_to(self.x, self.vectors[nodes])

    def note_closest(self, nodes, dists) -> bool:
        if self.is_data is not None:
            mask = self.is_data[nodes]
            if not mask.any():
                return False
            nodes, dists = nodes[mask], dists[mask]
        i = int(np.argmin(dists))
        if dists[i] < self.closest_d:
            self.closest_d = float(dists[i])
            self.closest = int(nodes[i])
            return True
        return False

    def emit(self, node: int, d: float) -> None:
        data_id = node - self.offset
        if data_id != self.exclude:
            self.pairs.append((data_id, d))

    def unvisited(self, u: int) -> np.ndarray:
        nbrs = self.adj[u]
        return nbrs[~self.visited[nbrs]]

    def cache(self, policy: CachePolicy) -> list[int]:
        if policy is CachePolicy.HWS:
            return [d for d, _ in self.pairs]
        if policy is CachePolicy.SWS and self.closest >= 0:
            return [self.closest - self.offset]
        return []

    # greedy phase; returns the queue or None when no in-range point was reached
    def seed_and_greedy(self, seeds, L, early_stop, patience):
        theta = self.theta
        counters = self.counters
        Q = []
        for s in seeds:
            s = int(s)
            if self.visited[s]:
                continue
            d = float(self.measure(np.array([s]))[0])
            heapq.heappush(Q, (d, s))
            if d < self.closest_d:
                self.closest_d, self.closest = d, s
            if d < theta:
                break
        if not Q:
            return None
        if Q[0][0] >= theta:
            stall = 0
            with PhaseTimer(counters, "greedy_time"):
                while Q:
                    if Q[0][0] < theta:
                        break
                    d, u = heapq.heappop(Q)
                    counters.greedy_pops += 1
                    nbrs = self.unvisited(u)
                    improved = False
                    if len(nbrs):
                        dv = self.measure(nbrs)
                        improved = self.note_closest(nbrs, dv)
                        closer = dv < d
                        for v, dd in zip(nbrs[closer].tolist(), dv[closer].tolist()):
                            heapq.heappush(Q, (dd, v))
                        if len(Q) > L:
                            Q = heapq.nsmallest(L, Q)
                    if early_stop:
                        stall = 0 if improved else stall + 1
                        if stall >= patience:
                            break
            if not Q or Q[0][0] >= theta:
                return None
        return Q

    def bfs(self, start) -> None:
        """Plain BFS over in-range points from the in-range ``(d, node)`` entries."""
        theta = self.theta
        counters = self.counters
        for d, u in start:
            self.emit(u, d)
        frontier = deque(u for _, u in start)
        with PhaseTimer(counters, "bfs_time"):
            while frontier:
                u = frontier.popleft()
                counters.bfs_pops += 1
                nbrs = self.unvisited(u)
                if self.is_data is not None:
                    nbrs = nbrs[self.is_data[nbrs]]
                if not len(nbrs):
                    continue
                dv = self.measure(nbrs)
                self.note_closest(nbrs, dv)
                hit = dv < theta
                for v, dd in zip(nbrs[hit].tolist(), dv[hit].tolist()):
                    self.emit(v, dd)
                    frontier.append(v)

    def hybrid(self, entries, L, patience) -> None:
        """Best-first traversal keeping every in-range point and at most ``L``
        out-of-range points (the farthest is evicted first).

        Stops when no in-range entry is queued, the out-of-range part is full
        and its maximum distance has not decreased for ``patience`` pops.
        """
        theta = self.theta
        counters = self.counters
        is_data = self.is_data
        inside = []  # heap of in-range (d, node)
        outside = []  # sorted out-of-range (d, node), len <= L
        for d, u in sorted(entries):
            if d < theta and (is_data is None or is_data[u]):
                inside.append((d, u))
                self.emit(u, d)
            elif len(outside) < L:
                outside.append((d, u))
        heapq.heapify(inside)
        last_max = math.inf
        stall = 0
        with PhaseTimer(counters, "bfs_time"):
            while inside or outside:
                if not inside and len(outside) >= L:
                    cur = outside[-1][0]
                    stall = stall + 1 if cur >= last_max else 0
                    if stall >= patience:
                        break
                else:
                    stall = 0
                last_max = outside[-1][0] if outside else -math.inf
                if inside and (not outside or inside[0] <= outside[0]):
                    _, u = heapq.heappop(inside)
                else:
                    _, u = outside.pop(0)
                counters.bfs_pops += 1
                nbrs = self.unvisited(u)
                if not len(nbrs):
                    continue
                dv = self.measure(nbrs)
                self.note_closest(nbrs, dv)
                for v, dd in zip(nbrs.tolist(), dv.tolist()):
                    if dd < theta and (is_data is None or is_data[v]):
                        heapq.heappush(inside, (dd, v))
                        self.emit(v, dd)
                    elif len(outside) < L:
                        bisect.insort(outside, (dd, v))
                    elif (dd, v) < outside[-1]:
                        outside.pop()
                        bisect.insort(outside, (dd, v))
                        counters.hybrid_evictions += 1


def _as_query(x, dimension: int) -> np.ndarray:
    xw = np.asarray(x, dtype=np.float32).astype(np.float64)
    if xw.shape != (dimension,):
        raise ConfigurationError(f"query has shape {xw.shape}, expected ({dimension},)")
    return xw


def join_single_query(x, data: VectorStore, graph: ProximityGraph, theta: float, seeds,
                      L: int = DEFAULT_L, *, early_stop: bool = False,
                      es_patience: int = DEFAULT_ES_PATIENCE,
                      cache_policy: CachePolicy = CachePolicy.NONE,
                      counters: Counters | None = None, exclude: int | None = None):
    """Two-phase threshold search for one query over a data graph.

    Returns ``(pairs, cache)`` where ``pairs`` is a list of
    ``(data id, distance)`` and ``cache`` the data ids to hand to the
    query's children under ``cache_policy``. ``exclude`` suppresses one data
    id from the output (self-joins).
    """
    if counters is None:
        counters = Counters()
    if not len(seeds):
        raise ConfigurationError("at least one seed is required")
    s = _Search(_as_query(x, data.dimension), data.wide, graph, theta, counters, exclude=exclude)
    Q = s.seed_and_greedy(seeds, L, early_stop, es_patience)
    if Q is not None:
        s.bfs(sorted(e for e in Q if e[0] < theta))
    return s.pairs, s.cache(cache_policy)


def join_single_query_hybrid(x, store: VectorStore, graph: ProximityGraph, theta: float, seeds,
                             L: int = DEFAULT_L, *, merged: bool = False,
                             query_node: int | None = None,
                             early_stop: bool = False,
                             es_patience: int = DEFAULT_ES_PATIENCE,
                             hybrid_patience: int = DEFAULT_HYBRID_PATIENCE,
                             cache_policy: CachePolicy = CachePolicy.NONE,
                             counters: Counters | None = None, exclude: int | None = None):
    """Hybrid BFS/best-first search for one query.

    Over a data graph it reuses the seed scan and greedy phase of
    :func:`join_single_query`. With ``merged=True`` the graph is a merged
    query+data graph over ``store`` (queries first); the search starts at
    ``query_node`` with distance 0, skips the greedy phase, and only data
    nodes produce pairs while query nodes act as out-of-range bridges.
    Data ids in the result are relative to the data part of ``store``.
    """
    if counters is None:
        counters = Counters()
    xw = _as_query(x, store.dimension)
    if merged:
        if query_node is None:
            raise ConfigurationError("merged mode needs the query's node id")
        is_data = graph.is_data
        offset = int(np.count_nonzero(~is_data))
        s = _Search(xw, store.wide, graph, theta, counters, is_data, offset, exclude)
        s.visited[query_node] = True
        entries = [(0.0, int(query_node))]
    else:
        if not len(seeds):
            raise ConfigurationError("at least one seed is required")
        s = _Search(xw, store.wide, graph, theta, counters, exclude=exclude)
        entries = s.seed_and_greedy(seeds, L, early_stop, es_patience)
        if entries is None:
            return s.pairs, s.cache(cache_policy)
    s.hybrid(entries, L, hybrid_patience)
    return s.pairs, s.cache(cache_policy)


def join_single_query_merged(x, store: VectorStore, graph: ProximityGraph, theta: float,
                             query_node: int, counters: Counters | None = None):
    """BFS from the query's own node in a merged graph; only data nodes are
    queued. Returns ``(data id, distance)`` pairs."""
    if counters is None:
        counters = Counters()
    is_data = graph.is_data
    offset = int(np.count_nonzero(~is_data))
    s = _Search(_as_query(x, store.dimension), store.wide, graph, theta, counters, is_data, offset)
    s.visited[query_node] = True
    # the query node is expanded but never emitted
    start = []
    with PhaseTimer(counters, "bfs_time"):
        counters.bfs_pops += 1
        nbrs = s.unvisited(query_node)
        nbrs = nbrs[is_data[nbrs]]
        if len(nbrs):
            dv = s.measure(nbrs)
            hit = dv < theta
            start = sorted(zip(dv[hit].tolist(), nbrs[hit].tolist()))
    s.bfs(start)
    return s.pairs


def predict_ood(query_node: int, merged: ProximityGraph, ood_factor: float = DEFAULT_OOD_FACTOR) -> bool:
    """Out-of-distribution test from the merged graph's stored statistics.

    ``d1`` is the query's mean distance to its data neighbors, ``d2`` the mean
    of those neighbors' own mean data-neighbor distances; OOD iff
    ``d1 > ood_factor * d2``. A query with no data neighbors is OOD.
    """
    nbrs = merged.adjacency[query_node]
    data_nbrs = nbrs[merged.roles[nbrs] == NodeRole.DATA]
    if not len(data_nbrs):
        return True
    d1 = float(merged.avg_data_neighbor_dist[query_node])
    d2 = float(np.mean(merged.avg_data_neighbor_dist[data_nbrs].astype(np.float64)))
    return d1 > ood_factor * d2


# --- full join ---------------------------------------------------------------

def _check_indexes(queries, data, indexes: JoinIndexes, variant: MethodVariant, self_join: bool):
    if variant is MethodVariant.NAIVE:
        return
    if variant.uses_merged_index:
        if self_join:
            raise ConfigurationError("merged-index variants do not support self-joins")
        g = indexes.merged
        if g is None:
            raise ConfigurationError(f"{variant.value} needs a merged index")
        if g.node_count != queries.count + data.count:
            raise ConfigurationError("merged index size does not match |X| + |Y|")
        expected = np.concatenate([np.full(queries.count, NodeRole.QUERY, np.uint8),
                                   np.full(data.count, NodeRole.DATA, np.uint8)])
        if not np.array_equal(g.roles, expected):
            raise ConfigurationError("merged index must hold queries first, then data")
        return
    if indexes.data is None:
        raise ConfigurationError(f"{variant.value} needs a data index")
    if indexes.data.node_count != data.count:
        raise ConfigurationError("data index does not match the data store")
    if variant in (MethodVariant.ES_HWS, MethodVariant.ES_SWS):
        if indexes.queries is None:
            raise ConfigurationError(f"{variant.value} needs a query index")
        if indexes.queries.node_count != queries.count:
            raise ConfigurationError("query index does not match the query store")


def vector_join(queries: VectorStore, data: VectorStore, indexes: JoinIndexes | None,
                config: JoinConfig, *, self_join: bool | None = None) -> JoinOutcome:
    """Approximate threshold join of ``queries`` against ``data``.

    ``self_join`` defaults to ``queries is data``; when set, pairs ``(i, i)``
    are left out.
    """
    check_same_dimension(queries, data)
    if self_join is None:
        self_join = queries is data
    if self_join and queries.count != data.count:
        raise ConfigurationError("self-join needs identical query and data stores")
    indexes = indexes or JoinIndexes()
    variant = config.variant
    _check_indexes(queries, data, indexes, variant, self_join)

    t_start = time.perf_counter()
    setup = Counters()
    theta = config.theta
    L = config.max_queue
    m = queries.count
    per_query = [None] * m
    results = [None] * m
    caches = None
    ood = None

    def run(q, fn):
        c = Counters()
        t0 = time.perf_counter()
        results[q] = fn(c)
        c.other_time = max(0.0, time.perf_counter() - t0 - c.greedy_time - c.bfs_time)
        per_query[q] = c
        return c

    if variant is MethodVariant.NAIVE:
        Y = data.wide
        for q in range(m):
            def naive(c, q=q):
                d = distances_to(queries.wide[q], Y)
                c.distance_computations += len(Y)
                hits = np.flatnonzero(d < theta)
                return [(int(j), float(d[j])) for j in hits if not (self_join and j == q)]
            run(q, naive)

    elif variant in (MethodVariant.INDEX, MethodVariant.ES):
        g = indexes.data
        es = variant is MethodVariant.ES
        for q in range(m):
            run(q, lambda c, q=q: join_single_query(
                queries.wide[q], data, g, theta, [g.entry_point], L, early_stop=es,
                es_patience=config.es_patience, counters=c,
                exclude=q if self_join else None)[0])

    elif variant in (MethodVariant.ES_HWS, MethodVariant.ES_SWS):
        g = indexes.data
        policy = CachePolicy.HWS if variant is MethodVariant.ES_HWS else CachePolicy.SWS
        order = order_queries(queries, indexes.queries, data.wide[g.entry_point], setup)
        caches = [[] for _ in range(m)]
        for q, p in order:
            seeds = caches[p] if p != SENTINEL and caches[p] else [g.entry_point]

            def shared(c, q=q, seeds=seeds):
                pairs, caches[q] = join_single_query(
                    queries.wide[q], data, g, theta, seeds, L, early_stop=True,
                    es_patience=config.es_patience, cache_policy=policy, counters=c,
                    exclude=q if self_join else None)
                c.cache_entries = len(caches[q])
                return pairs
            run(q, shared)

    else:
        g = indexes.merged
        union = queries.concat(data)
        adaptive = variant is MethodVariant.ES_MI_ADAPT
        if adaptive:
            ood = [False] * m
        for q in range(m):
            if adaptive:
                force = config.hybrid_force
                flag = predict_ood(q, g, config.ood_factor) if force is HybridMode.AUTO \
                    else force is HybridMode.BBFS
                ood[q] = flag
            else:
                flag = False
            if flag:
                run(q, lambda c, q=q: join_single_query_hybrid(
                    queries.wide[q], union, g, theta, [q], L, merged=True, query_node=q,
                    hybrid_patience=config.hybrid_patience, counters=c)[0])
            else:
                run(q, lambda c, q=q: join_single_query_merged(
                    queries.wide[q], union, g, theta, q, counters=c))

    pairs = [(q, d, dist) for q in range(m) for d, dist in results[q]]
    elapsed = time.perf_counter() - t_start
    setup.other_time = max(0.0, elapsed - sum(c.total_time for c in per_query))
    total = Counters.total([setup, *per_query])
    return JoinOutcome(pairs, total, per_query, setup, ood, caches)
