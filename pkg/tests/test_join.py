import numpy as np
import pytest

import vecjoin.join as join_mod
from vecjoin import (ConfigurationError, Counters, GroundTruth, HybridMode, IndexBuildParams,
                     JoinConfig, JoinIndexes, JoinOutcome, MethodVariant, NodeRole, ProximityGraph,
                     VectorStore, WorkloadSpec, build_index, build_merged_index, generate, nlj_exact,
                     order_queries, predict_ood, recall, vector_join)
from vecjoin.join import (SENTINEL, CachePolicy, join_single_query, join_single_query_hybrid,
                          order_weight)
from vecjoin.oracle import mst_reference

from conftest import scalar_distance

SMALL = IndexBuildParams(k_nn=40, max_degree=20)


@pytest.fixture(scope="module")
def gaussian():
    spec = WorkloadSpec(dim=8, data_count=2000, query_count=100, cluster_count=1, rng_seed=4)
    q, d = generate(spec)
    idx = JoinIndexes(data=build_index(d, SMALL), queries=build_index(q, SMALL),
                      merged=build_merged_index(q, d, SMALL))
    return q, d, idx


@pytest.fixture(scope="module")
def two_clusters():
    spec = WorkloadSpec(generator="OodDisplaced", dim=16, data_count=103, query_count=10,
                        cluster_count=2, rng_seed=2)
    q, d = generate(spec)
    params = IndexBuildParams(k_nn=40, max_degree=40)
    idx = JoinIndexes(data=build_index(d, params), merged=build_merged_index(q, d, params))
    return q, d, idx, 12.5


def region_reachable(g, region):
    """True when every node of ``region`` is reachable from every other
    along edges that stay inside ``region``."""
    for start in region:
        seen, todo = {start}, [start]
        while todo:
            u = todo.pop()
            for v in g.neighbors(u):
                v = int(v)
                if v in region and v not in seen:
                    seen.add(v)
                    todo.append(v)
        if seen != region:
            return False
    return True


def selectivity_theta(q, d, frac):
    D = np.sqrt(((q.wide[:, None] - d.wide[None]) ** 2).sum(-1))
    return float(np.quantile(D, frac))


class TestOrderQueries:
    def test_single_query(self):
        q = VectorStore([[1.0, 1.0]])
        assert order_queries(q, ProximityGraph([[]], 0), [0.0, 0.0]) == [(0, SENTINEL)]

    def test_close_pair_shares(self):
        q = VectorStore([[100.0, 0.0], [100.1, 0.0]])
        g = ProximityGraph([[1], [0]], 0)
        order = order_queries(q, g, [0.0, 0.0])
        assert order[0][1] == SENTINEL
        assert order[1] == (1 - order[0][0], order[0][0])

    def test_empty(self):
        assert order_queries(VectorStore.empty(2), ProximityGraph([], 0), [0.0, 0.0]) == []

    def test_weight_matches_kruskal(self, random_store):
        q = random_store(50, 4)
        g = build_index(q, IndexBuildParams(k_nn=10, max_degree=5))
        seed = np.full(4, 3.0)
        # Kruskal over the same edge set with the sentinel as node 0
        edges = [(0, i + 1, scalar_distance(q.data[i], seed)) for i in range(50)]
        for u in range(50):
            for v in g.neighbors(u):
                edges.append((u + 1, int(v) + 1, scalar_distance(q.data[u], q.data[v])))
        total, _ = mst_reference(edges, 51)
        order = order_queries(q, g, seed)
        assert order_weight(q, order, seed) == pytest.approx(total, rel=1e-9)

    def test_tree_order(self, random_store):
        q = random_store(80, 3)
        g = build_index(q, IndexBuildParams(k_nn=8, max_degree=4))
        order = order_queries(q, g, np.zeros(3))
        assert sorted(x for x, _ in order) == list(range(80))
        pos = {x: i for i, (x, _) in enumerate(order)}
        assert all(p == SENTINEL or pos[p] < pos[x] for x, p in order)

    def test_counts_distances(self, random_store):
        q = random_store(10, 3)
        g = build_index(q, IndexBuildParams(k_nn=4, max_degree=4))
        c = Counters()
        order_queries(q, g, np.zeros(3), c)
        assert c.distance_computations == g.edge_count() + 10


class TestJoinSingleQuery:
    def test_seed_in_range_skips_greedy(self, gaussian):
        _, d, idx = gaussian
        c = Counters()
        pairs, _ = join_single_query(d.data[17], d, idx.data, 0.3, [17], counters=c)
        assert (17, 0.0) in pairs
        assert c.greedy_pops == 0

    def test_zero_theta(self, gaussian):
        q, d, idx = gaussian
        pairs, cache = join_single_query(q.data[0], d, idx.data, 0.0, [idx.data.entry_point],
                                         cache_policy=CachePolicy.SWS)
        assert pairs == []
        assert len(cache) == 1

    def test_result_is_in_range_closure(self, gaussian):
        q, d, idx = gaussian
        g = idx.data
        theta = selectivity_theta(q, d, 0.01)
        truth = nlj_exact(q, d, theta)
        connected = complete = 0
        for i in range(q.count):
            want = {j for a, j, _ in truth.pairs if a == i}
            got = {j for j, _ in join_single_query(q.data[i], d, g, theta, [g.entry_point])[0]}
            assert got <= want
            # closed under in-range edges: BFS stops only at out-of-range nodes
            for j in got:
                assert {int(v) for v in g.neighbors(j) if int(v) in want} <= got
            if want and region_reachable(g, want):
                connected += 1
                complete += got == want
        assert connected > q.count // 2
        assert complete == connected

    def test_no_repeat_measurements(self, gaussian, monkeypatch):
        q, d, idx = gaussian
        seen = []
        orig = join_mod._Search.measure

        def spy(self, nodes):
            seen.extend(nodes.tolist())
            return orig(self, nodes)
        monkeypatch.setattr(join_mod._Search, "measure", spy)
        theta = selectivity_theta(q, d, 0.02)
        for i in range(20):
            seen.clear()
            c = Counters()
            join_single_query(q.data[i], d, idx.data, theta, [idx.data.entry_point],
                              early_stop=True, counters=c)
            assert len(seen) == len(set(seen)) == c.distance_computations

    def test_sws_caches_global_closest(self, gaussian, monkeypatch):
        q, d, idx = gaussian
        log = []
        orig = join_mod._Search.measure

        def spy(self, nodes):
            log.extend(nodes.tolist())
            return orig(self, nodes)
        monkeypatch.setattr(join_mod._Search, "measure", spy)
        for i in range(20):
            log.clear()
            _, cache = join_single_query(q.data[i], d, idx.data, 0.05, [idx.data.entry_point],
                                         early_stop=True, cache_policy=CachePolicy.SWS)
            best = min(log, key=lambda v: (scalar_distance(q.data[i], d.data[v]), v))
            assert cache == [best]

    def test_hws_caches_join_result(self, gaussian):
        q, d, idx = gaussian
        theta = selectivity_theta(q, d, 0.01)
        for i in range(10):
            pairs, cache = join_single_query(q.data[i], d, idx.data, theta, [idx.data.entry_point],
                                             cache_policy=CachePolicy.HWS)
            assert cache == [j for j, _ in pairs]

    def test_requires_seed(self, gaussian):
        q, d, idx = gaussian
        with pytest.raises(ConfigurationError):
            join_single_query(q.data[0], d, idx.data, 1.0, [])


class TestHybrid:
    def test_connected_region_matches_bfs(self, gaussian):
        q, d, idx = gaussian
        theta = selectivity_theta(q, d, 0.01)
        for i in range(30):
            plain, _ = join_single_query(q.data[i], d, idx.data, theta, [idx.data.entry_point])
            hyb, _ = join_single_query_hybrid(q.data[i], d, idx.data, theta, [idx.data.entry_point], 64)
            assert {j for j, _ in hyb} >= {j for j, _ in plain}
            truth = {j for _, j, _ in nlj_exact(VectorStore(q.data[i:i + 1]), d, theta).pairs}
            if {j for j, _ in plain} == truth:
                assert {j for j, _ in hyb} == truth

    def test_wall_blocks_bfs_but_not_bbfs(self, two_clusters):
        q, d, idx, theta = two_clusters
        truth = nlj_exact(q, d, theta)
        g = idx.data
        plain = set()
        hyb = set()
        for i in range(q.count):
            plain |= {(i, j) for j, _ in join_single_query(q.data[i], d, g, theta, [g.entry_point])[0]}
            hyb |= {(i, j) for j, _ in
                    join_single_query_hybrid(q.data[i], d, g, theta, [g.entry_point], 64)[0]}
        want = truth.pair_keys()
        assert len(want) > 0
        assert len(plain & want) / len(want) == pytest.approx(0.5, abs=0.05)
        assert hyb == want

    def test_terminates_with_nothing_in_range(self, gaussian):
        q, d, idx = gaussian
        c = Counters()
        pairs, _ = join_single_query_hybrid(q.data[0] + 100.0, d, idx.data, 0.5,
                                            [idx.data.entry_point], 1, hybrid_patience=1, counters=c)
        assert pairs == []
        assert c.bfs_pops + c.greedy_pops < 50

    def test_out_of_range_population_capped(self, two_clusters, monkeypatch):
        q, d, idx, theta = two_clusters
        sizes = []
        real = join_mod.bisect.insort

        class Shim:
            @staticmethod
            def insort(seq, item):
                real(seq, item)
                sizes.append(len(seq))
        monkeypatch.setattr(join_mod, "bisect", Shim)
        for L in (1, 4, 16):
            sizes.clear()
            for i in range(q.count):
                join_single_query_hybrid(q.data[i], q.concat(d), idx.merged, theta, [i], L,
                                         merged=True, query_node=i)
            assert sizes and max(sizes) <= L

    def test_merged_mode_needs_query_node(self, two_clusters):
        q, d, idx, theta = two_clusters
        with pytest.raises(ConfigurationError):
            join_single_query_hybrid(q.data[0], q.concat(d), idx.merged, theta, [0], merged=True)


class TestPredictOOD:
    def test_in_distribution_duplicate(self):
        rng = np.random.default_rng(0)
        d = VectorStore(rng.random((400, 4)))
        q = VectorStore(d.data[[5, 50, 150]])
        g = build_merged_index(q, d, IndexBuildParams(k_nn=30, max_degree=12))
        assert not any(predict_ood(i, g) for i in range(3))

    def test_displaced(self, two_clusters):
        q, _, idx, _ = two_clusters
        assert all(predict_ood(i, idx.merged) for i in range(q.count))

    def test_no_data_neighbors(self):
        g = ProximityGraph([[1], [0], [0]], 2, roles=[NodeRole.QUERY, NodeRole.QUERY, NodeRole.DATA],
                           avg_data_neighbor_dist=[0.0, 0.0, 1.0])
        assert predict_ood(0, g)

    def test_degenerate_ratios(self):
        roles = [NodeRole.QUERY, NodeRole.DATA]
        zero_d2 = ProximityGraph([[1], [0]], 1, roles=roles, avg_data_neighbor_dist=[0.5, 0.0])
        assert predict_ood(0, zero_d2)
        both_zero = ProximityGraph([[1], [0]], 1, roles=roles, avg_data_neighbor_dist=[0.0, 0.0])
        assert not predict_ood(0, both_zero)

    def test_factor(self):
        roles = [NodeRole.QUERY, NodeRole.DATA]
        g = ProximityGraph([[1], [0]], 1, roles=roles, avg_data_neighbor_dist=[2.0, 1.0])
        assert predict_ood(0, g, 1.5) and not predict_ood(0, g, 2.0)


class TestVectorJoin:
    def test_naive_matches_oracle(self, gaussian):
        q, d, _ = gaussian
        out = vector_join(q, d, None, JoinConfig(0.5, MethodVariant.NAIVE))
        assert out.pair_keys() == nlj_exact(q, d, 0.5).pair_keys()
        assert out.counters.distance_computations == q.count * d.count

    @pytest.mark.parametrize("variant", list(MethodVariant))
    def test_sound_and_counted(self, gaussian, variant):
        q, d, idx = gaussian
        theta = selectivity_theta(q, d, 0.005)
        out = vector_join(q, d, idx, JoinConfig(theta, variant))
        keys = [(a, b) for a, b, _ in out.pairs]
        assert len(keys) == len(set(keys))
        for a, b, dist in out.pairs:
            assert scalar_distance(q.data[a], d.data[b]) < theta
            assert dist < theta
        assert 0.0 <= recall(out, nlj_exact(q, d, theta)) <= 1.0
        assert len(out.per_query) == q.count
        total = Counters.total([out.setup, *out.per_query])
        assert total == out.counters
        c = out.counters
        assert c.total_time == pytest.approx(c.greedy_time + c.bfs_time + c.other_time)

    @pytest.mark.parametrize("variant", list(MethodVariant))
    def test_deterministic(self, gaussian, variant):
        q, d, idx = gaussian
        cfg = JoinConfig(0.4, variant, max_queue=32)
        a, b = vector_join(q, d, idx, cfg), vector_join(q, d, idx, cfg)
        assert a.pairs == b.pairs
        strip = lambda c: (c.distance_computations, c.greedy_pops, c.bfs_pops,
                           c.hybrid_evictions, c.cache_entries)
        assert strip(a.counters) == strip(b.counters)

    def test_hws_and_sws_below_min_distance(self, gaussian):
        q, d, idx = gaussian
        theta = 0.5 * float(np.sqrt(((q.wide[:, None] - d.wide[None]) ** 2).sum(-1)).min())
        hws = vector_join(q, d, idx, JoinConfig(theta, MethodVariant.ES_HWS))
        sws = vector_join(q, d, idx, JoinConfig(theta, MethodVariant.ES_SWS))
        assert hws.pairs == [] and hws.counters.cache_entries == 0
        assert sws.pairs == [] and sws.counters.cache_entries == q.count
        assert all(len(c) == 1 for c in sws.caches)

    def test_hws_cache_equals_join(self, gaussian):
        q, d, idx = gaussian
        out = vector_join(q, d, idx, JoinConfig(0.6, MethodVariant.ES_HWS))
        assert out.counters.cache_entries == len(out.pairs)
        for i, cache in enumerate(out.caches):
            assert cache == [b for a, b, _ in out.pairs if a == i]

    def test_mi_has_no_greedy_and_no_cache(self, gaussian):
        q, d, idx = gaussian
        for v in (MethodVariant.ES_MI, MethodVariant.ES_MI_ADAPT):
            out = vector_join(q, d, idx, JoinConfig(0.5, v))
            assert all(c.greedy_pops == 0 for c in out.per_query)
            assert out.counters.cache_entries == 0

    def test_adaptive_force_modes(self, two_clusters):
        q, d, idx, theta = two_clusters
        truth = nlj_exact(q, d, theta)
        bfs = vector_join(q, d, idx, JoinConfig(theta, "ES_MI_Adapt", hybrid_force="bfs"))
        plain = vector_join(q, d, idx, JoinConfig(theta, "ES_MI"))
        assert bfs.pairs == plain.pairs and bfs.ood_flagged == 0
        bbfs = vector_join(q, d, idx, JoinConfig(theta, "ES_MI_Adapt", max_queue=64, hybrid_force="bbfs"))
        auto = vector_join(q, d, idx, JoinConfig(theta, "ES_MI_Adapt", max_queue=64))
        assert bbfs.pairs == auto.pairs and auto.ood_flagged == q.count
        assert recall(auto, truth) > recall(plain, truth)

    def test_recall_monotone_in_L(self, two_clusters):
        q, d, idx, theta = two_clusters
        truth = nlj_exact(q, d, theta)
        r = [recall(vector_join(q, d, idx, JoinConfig(theta, "ES_MI_Adapt", max_queue=L)), truth)
             for L in (1, 8, 64, 256)]
        assert r == sorted(r)

    def test_self_join_excludes_identity(self, gaussian):
        _, d, idx = gaussian
        for v in (MethodVariant.NAIVE, MethodVariant.ES, MethodVariant.ES_SWS):
            ix = JoinIndexes(data=idx.data, queries=idx.data)
            out = vector_join(d, d, ix, JoinConfig(0.3, v))
            assert all(a != b for a, b, _ in out.pairs)
        naive = vector_join(d, d, None, JoinConfig(0.3, "Naive"))
        assert naive.pair_keys() == nlj_exact(d, d, 0.3, exclude_self=True).pair_keys()

    def test_index_mismatch_errors(self, gaussian):
        q, d, idx = gaussian
        with pytest.raises(ConfigurationError):
            vector_join(q, d, JoinIndexes(), JoinConfig(0.5, "ES"))
        with pytest.raises(ConfigurationError):
            vector_join(q, d, JoinIndexes(data=idx.data), JoinConfig(0.5, "ES_SWS"))
        with pytest.raises(ConfigurationError):
            vector_join(q, d, JoinIndexes(data=idx.data), JoinConfig(0.5, "ES_MI"))
        with pytest.raises(ConfigurationError):
            vector_join(q, d, JoinIndexes(data=idx.queries), JoinConfig(0.5, "Index"))
        with pytest.raises(ConfigurationError):
            vector_join(d, d, JoinIndexes(merged=idx.merged), JoinConfig(0.5, "ES_MI"))

    @pytest.mark.parametrize("kwargs", [dict(theta=-1), dict(theta=1, max_queue=0),
                                        dict(theta=1, es_patience=0), dict(theta=1, ood_factor=0),
                                        dict(theta=1, variant="Bogus"), dict(theta=1, hybrid_force="x")])
    def test_config_validation(self, kwargs):
        with pytest.raises(ConfigurationError):
            JoinConfig(**kwargs)


class TestRecall:
    truth = GroundTruth(1.0, [(0, 0, 0.1), (0, 1, 0.2), (1, 0, 0.3), (1, 1, 0.4)])

    def outcome(self, pairs):
        return JoinOutcome(pairs, Counters())

    def test_identity(self):
        assert recall(self.outcome(self.truth.pairs), self.truth) == 1.0

    def test_empty_outcome(self):
        assert recall(self.outcome([]), self.truth) == 0.0

    def test_half(self):
        assert recall(self.outcome(self.truth.pairs[:2]), self.truth) == 0.5

    def test_empty_truth(self):
        assert recall(self.outcome([]), GroundTruth(0.0, [])) == 1.0
