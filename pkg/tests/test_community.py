import itertools
from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from communerase.community import (
    CommunityPartition,
    bekm,
    binomial_tail,
    conductance,
    global_density,
    load_partition,
    louvain,
    modularity,
    refine,
    save_partition,
    significance,
)
from communerase.errors import ParameterError
from communerase.graph import build_graph

from conftest import make_graph, random_graph


def partition_of(g, groups):
    assignment = {}
    for cid, group in enumerate(groups):
        for v in group:
            assignment[v] = cid
    return CommunityPartition.from_assignment(g, assignment)


def modularity_bruteforce(g, assignment):
    """Direct double-sum evaluation of the modularity formula."""
    n = g.node_count
    A = np.zeros((n, n))
    for (u, v), w in zip(g.edges.tolist(), g.weights.tolist()):
        A[g.row(u), g.row(v)] = w
        A[g.row(v), g.row(u)] = w
    k = A.sum(axis=1)
    two_m = A.sum()
    q = 0.0
    for i in range(n):
        for j in range(n):
            ci = assignment[int(g.ids[i])]
            cj = assignment[int(g.ids[j])]
            if ci == cj:
                q += A[i, j] - k[i] * k[j] / two_m
    return q / two_m


def all_partitions(items):
    """Every set partition of the given items (Bell-number enumeration)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for sub in all_partitions(rest):
        for i in range(len(sub)):
            yield sub[:i] + [[first] + sub[i]] + sub[i + 1 :]
        yield [[first]] + sub


class TestModularity:
    def test_whole_graph_is_zero(self, triangle_pair_bridge):
        g = triangle_pair_bridge
        p = partition_of(g, [range(6)])
        assert modularity(g, p) == pytest.approx(0.0, abs=1e-12)

    def test_singleton_triangle(self):
        g = make_graph([(0, 1), (0, 2), (1, 2)])
        p = partition_of(g, [[0], [1], [2]])
        assert modularity(g, p) == pytest.approx(-1.0 / 3.0, abs=1e-12)

    def test_bridge_graph_matches_bruteforce(self, triangle_pair_bridge):
        g = triangle_pair_bridge
        p = partition_of(g, [[0, 1, 2], [3, 4, 5]])
        expected = modularity_bruteforce(g, p.assignment)
        assert modularity(g, p) == pytest.approx(expected, abs=1e-12)

    def test_random_graphs_match_bruteforce(self):
        rng = np.random.default_rng(42)
        for trial in range(50):
            n = int(rng.integers(3, 13))
            g = random_graph(rng, n, edge_prob=0.4)
            if g.edge_count == 0:
                continue
            cids = rng.integers(0, 3, size=n)
            assignment = {int(v): int(c) for v, c in zip(g.ids, cids)}
            p = CommunityPartition.from_assignment(g, assignment)
            assert modularity(g, p) == pytest.approx(
                modularity_bruteforce(g, assignment), abs=1e-12
            )

    def test_empty_graph_rejected(self):
        g = make_graph([], n=2)
        with pytest.raises(ParameterError, match="undefined"):
            modularity(g, partition_of(g, [[0], [1]]))


class TestLouvain:
    def test_single_node(self):
        g = make_graph([], n=1)
        with pytest.warns(UserWarning):
            p = louvain(g, seed=0)
        assert p.community_count == 1

    def test_two_disjoint_triangles_unique_optimum(self):
        g = make_graph([(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)])
        # oracle: exhaustive search over all 203 partitions of 6 nodes
        best_q, best_parts = -2.0, None
        for parts in all_partitions(range(6)):
            assignment = {}
            for cid, group in enumerate(parts):
                for v in group:
                    assignment[v] = cid
            q = modularity_bruteforce(g, assignment)
            if q > best_q + 1e-12:
                best_q, best_parts = q, parts
        expected = {frozenset(p) for p in best_parts}
        assert expected == {frozenset({0, 1, 2}), frozenset({3, 4, 5})}
        for seed in range(5):
            p = louvain(g, seed=seed)
            got = {frozenset(c.tolist()) for c in p.communities.values()}
            assert got == expected

    def test_bridge_graph_recovers_triangles(self, triangle_pair_bridge):
        for seed in range(20):
            p = louvain(triangle_pair_bridge, seed=seed)
            got = {frozenset(c.tolist()) for c in p.communities.values()}
            assert got == {frozenset({0, 1, 2}), frozenset({3, 4, 5})}

    def test_never_below_singleton_modularity(self):
        rng = np.random.default_rng(7)
        for trial in range(20):
            n = int(rng.integers(4, 16))
            g = random_graph(rng, n, edge_prob=0.3)
            if g.edge_count == 0:
                continue
            singleton = partition_of(g, [[int(v)] for v in g.ids])
            p = louvain(g, seed=trial)
            assert modularity(g, p) >= modularity(g, singleton) - 1e-12

    def test_deterministic_per_seed(self, triangle_pair_bridge):
        a = louvain(triangle_pair_bridge, seed=3)
        b = louvain(triangle_pair_bridge, seed=3)
        assert a.assignment == b.assignment


class TestSignificance:
    def test_clique_single_term(self):
        g = make_graph([(0, 1), (0, 2), (1, 2)])
        assert significance(g, [0, 1, 2], 0.25) == pytest.approx(0.25**3, rel=1e-12)

    def test_no_internal_edges_is_one(self):
        g = make_graph([(0, 1)], n=4)
        assert significance(g, [2, 3], 0.3) == 1.0

    def test_hand_binomial_sum(self):
        # T=3 pairs, t=2 internal edges, p=0.5: 3*(1/8) + 1/8 = 0.5
        g = make_graph([(0, 1), (1, 2)])
        assert significance(g, [0, 1, 2], 0.5) == pytest.approx(0.5, abs=1e-12)

    def test_size_one_returns_one(self):
        g = make_graph([(0, 1)])
        assert significance(g, [0], 0.5) == 1.0

    def test_matches_exact_rational_sums(self):
        # oracle: exact Fraction arithmetic for every (T<=20, t, p)
        for p_num, p_den in ((1, 10), (1, 2), (9, 10)):
            p = Fraction(p_num, p_den)
            for T in range(0, 21):
                for t in range(0, T + 1):
                    exact = sum(
                        comb(T, j) * p**j * (1 - p) ** (T - j) for j in range(t, T + 1)
                    )
                    got = binomial_tail(T, t, float(p))
                    assert abs(got - float(exact)) < 1e-12

    @given(st.integers(1, 40), st.integers(0, 40))
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_threshold(self, T, t):
        t = min(t, T)
        assert binomial_tail(T, t, 0.3) >= binomial_tail(T, t + 1, 0.3) - 1e-15

    def test_bad_null_p(self):
        g = make_graph([(0, 1)])
        with pytest.raises(ParameterError):
            significance(g, [0, 1], 1.5)


class TestConductance:
    def test_connected_component_is_zero(self):
        g = make_graph([(0, 1), (2, 3)])
        assert conductance(g, [0, 1]) == 0.0

    def test_path_pair(self):
        g = make_graph([(0, 1), (1, 2)])
        # C={0,1}: cut=1, vol=3, vol complement=1 -> 1.0
        assert conductance(g, [0, 1]) == pytest.approx(1.0)

    def test_path_middle(self):
        g = make_graph([(0, 1), (1, 2)])
        # C={1}: cut=2, vol=2 both sides -> 1.0
        assert conductance(g, [1]) == pytest.approx(1.0)

    def test_whole_graph_zero(self, triangle_pair_bridge):
        assert conductance(triangle_pair_bridge, range(6)) == 0.0

    def test_empty_rejected(self):
        g = make_graph([(0, 1)])
        with pytest.raises(ParameterError):
            conductance(g, [])

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_in_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng, 12, edge_prob=0.3)
        size = int(rng.integers(1, 12))
        community = rng.choice(g.ids, size=size, replace=False)
        assert 0.0 <= conductance(g, community) <= 1.0 + 1e-12


class TestRefine:
    def test_all_significant_unchanged(self):
        # two components with zero conductance and tiny p-values
        g = make_graph([(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)])
        p = partition_of(g, [[0, 1, 2], [3, 4, 5]])
        out = refine(g, p, alpha=0.5, null_p=0.05)
        assert out is p

    def test_merged_cliques_split(self):
        clique1 = [(u, v) for u in range(4) for v in range(u + 1, 4)]
        clique2 = [(u + 4, v + 4) for u in range(4) for v in range(u + 1, 4)]
        g = make_graph(clique1 + clique2 + [(3, 4)])
        merged = partition_of(g, [range(8)])
        out = refine(g, merged, alpha=0.05, null_p=global_density(g))
        got = {frozenset(c.tolist()) for c in out.communities.values()}
        assert got == {frozenset(range(4)), frozenset(range(4, 8))}
        for cid in out.communities:
            if len(out.communities[cid]) > 1:
                assert significance(g, out.communities[cid], global_density(g)) <= 0.05

    def test_sbm_postcondition_audit(self):
        rng = np.random.default_rng(1)
        blocks = [list(range(i * 8, (i + 1) * 8)) for i in range(4)]
        edges = []
        for b in blocks:
            for u, v in itertools.combinations(b, 2):
                if rng.random() < 0.7:
                    edges.append((u, v))
        for b1, b2 in itertools.combinations(blocks, 2):
            for u in b1:
                for v in b2:
                    if rng.random() < 0.03:
                        edges.append((u, v))
        g = make_graph(edges, n=32)
        p0 = louvain(g, seed=0)
        alpha = 0.05
        out = refine(g, p0, alpha=alpha)
        null = global_density(g)
        covered = sorted(v for c in out.communities.values() for v in c.tolist())
        assert covered == sorted(g.ids.tolist())
        for cid, members in out.communities.items():
            if len(members) > 1 and cid not in out.unresolvable:
                assert significance(g, members, null) <= alpha + 1e-12

    def test_partition_stays_valid(self):
        rng = np.random.default_rng(5)
        g = random_graph(rng, 24, edge_prob=0.15)
        out = refine(g, louvain(g, seed=2))
        total = sum(len(c) for c in out.communities.values())
        assert total == g.node_count
        assert sum(s.internal_edges for s in out.stats.values()) <= g.edge_count


class TestBekm:
    def test_k_one(self):
        g = random_graph(np.random.default_rng(0), 7)
        p = bekm(g, k=1, seed=0)
        assert p.community_count == 1
        assert len(p.communities[0]) == 7

    def test_forced_balance_two_pairs(self):
        g = random_graph(np.random.default_rng(1), 4)
        p = bekm(g, k=2, seed=0)
        sizes = sorted(len(c) for c in p.communities.values())
        assert sizes == [2, 2]

    def test_blob_recovery(self):
        rng = np.random.default_rng(2)
        a = rng.normal(loc=0.0, scale=0.2, size=(10, 2))
        b = rng.normal(loc=8.0, scale=0.2, size=(10, 2))
        g = build_graph(np.empty((0, 2), dtype=np.int64), np.vstack([a, b]),
                        np.zeros(20, dtype=np.int64))
        p = bekm(g, k=2, seed=3)
        got = {frozenset(c.tolist()) for c in p.communities.values()}
        assert got == {frozenset(range(10)), frozenset(range(10, 20))}

    @given(st.integers(2, 23), st.integers(1, 23), st.integers(0, 500))
    @settings(max_examples=40, deadline=None)
    def test_size_bounds(self, n, k, seed):
        k = min(k, n)
        g = random_graph(np.random.default_rng(seed), n, edge_prob=0.1)
        p = bekm(g, k=k, seed=seed)
        sizes = [len(c) for c in p.communities.values()]
        assert min(sizes) >= n // k
        assert max(sizes) <= -(-n // k)
        assert len(sizes) == k

    def test_k_too_large(self):
        g = random_graph(np.random.default_rng(0), 3)
        with pytest.raises(ParameterError):
            bekm(g, k=5, seed=0)

    def test_deterministic(self):
        g = random_graph(np.random.default_rng(4), 15)
        assert bekm(g, 4, seed=9).assignment == bekm(g, 4, seed=9).assignment


def test_partition_text_round_trip(tmp_path, triangle_pair_bridge):
    p = louvain(triangle_pair_bridge, seed=1)
    path = tmp_path / "partition.txt"
    save_partition(p, path)
    q = load_partition(triangle_pair_bridge, path)
    assert q.assignment == p.assignment
