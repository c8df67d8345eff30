import numpy as np
import pytest

from communerase.community import CommunityPartition, louvain, restrict_partition
from communerase.errors import ParameterError
from communerase.graph import build_graph, remove_nodes
from communerase.mapping import MapConfig, build_mapped_graph
from communerase.unlearn import (
    FILTERED,
    PRINCIPAL,
    InfluenceSet,
    UnlearnRequest,
    influence,
    unlearn,
    verify_unlearned,
)

from conftest import random_graph


def mapped_setup(seed=0, n=24, edge_prob=0.2, num_classes=3, cfg=None):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, edge_prob=edge_prob, d=4, num_classes=num_classes)
    p = louvain(g, seed=seed)
    mapped, tables = build_mapped_graph(g, p, cfg)
    return g, p, mapped, tables


def scratch_rebuild(g, p, victims, cfg=None):
    g_after = remove_nodes(g, victims)
    p_after = restrict_partition(g_after, p)
    return build_mapped_graph(g_after, p_after, cfg), g_after


class TestInfluence:
    def test_sole_member_is_principal(self):
        feats = np.array([[0.0], [5.0], [5.1]])
        labels = np.array([0, 1, 1])
        g = build_graph(np.array([(0, 1), (1, 2)]), feats, labels, num_classes=2)
        p = CommunityPartition.from_assignment(g, {0: 0, 1: 1, 2: 1})
        mapped, tables = build_mapped_graph(g, p)
        infl = influence(tables, UnlearnRequest((0,)))
        assert infl.verdicts[0] == PRINCIPAL
        assert infl.affected_nodes == (0,)
        assert infl.affected_pairs == ((0, 1),)

    def test_filtered_crossless_victim_empty_influence(self):
        # community {0,1,2,3}: three tight points and one outlier with no
        # cross edges; the outlier is outside the retained set
        feats = np.array([
            [0.0, 0.0], [0.05, 0.0], [0.0, 0.05], [9.0, 9.0],
            [5.0, 0.0], [5.1, 0.0],
        ])
        labels = np.array([0, 0, 0, 0, 1, 1])
        edges = np.array([(0, 1), (0, 2), (1, 2), (1, 3), (4, 5), (2, 4)])
        g = build_graph(edges, feats, labels, num_classes=2)
        p = CommunityPartition.from_assignment(g, {0: 0, 1: 0, 2: 0, 3: 0, 4: 1, 5: 1})
        mapped, tables = build_mapped_graph(g, p)
        assert 3 not in tables.records[0].retained.tolist()
        infl = influence(tables, UnlearnRequest((3,)))
        assert infl.verdicts[3] == FILTERED
        assert infl.empty

    def test_two_retained_victims_union_of_incidences(self):
        g, p, mapped, tables = mapped_setup(seed=3)
        cids = sorted(tables.records)
        picks = []
        for cid in cids:
            rec = tables.records[cid]
            if len(rec.retained):
                picks.append(int(rec.retained[0]))
            if len(picks) == 2:
                break
        assert len(picks) == 2
        infl = influence(tables, UnlearnRequest(tuple(picks)))
        assert set(infl.affected_nodes) == {tables.membership[v] for v in picks}
        expected_pairs = set(tables.pairs_incident_to(infl.edge_touched))
        assert set(infl.affected_pairs) == expected_pairs

    def test_unknown_victim_named(self):
        _, _, _, tables = mapped_setup()
        with pytest.raises(ParameterError, match="999"):
            influence(tables, UnlearnRequest((999,)))

    def test_strict_makes_everything_principal(self):
        g, p, mapped, tables = mapped_setup(seed=5)
        v = int(g.ids[0])
        infl = influence(tables, UnlearnRequest((v,), strict_feature_update=True))
        assert infl.verdicts[v] == PRINCIPAL

    def test_duplicate_victims_rejected(self):
        with pytest.raises(ParameterError, match="duplicate"):
            UnlearnRequest((1, 1))


class TestUnlearn:
    def test_empty_community_deletes_mapped_node(self):
        g, p, mapped, tables = mapped_setup(seed=1)
        cid = sorted(tables.records)[0]
        victims = tuple(int(v) for v in tables.records[cid].members)
        mapped2, tables2, g2 = unlearn(g, mapped, tables, UnlearnRequest(victims))
        assert cid not in tables2.records
        assert cid not in mapped2.cids.tolist()
        assert all(cid not in pair for pair in tables2.cross_edges)
        # other communities' mapped rows identical bits
        for i, c in enumerate(mapped2.cids.tolist()):
            j = mapped.index_of(c)
            assert np.array_equal(mapped2.features[i], mapped.features[j])
            assert mapped2.labels[i] == mapped.labels[j]

    def test_strict_equals_scratch_rebuild(self):
        for seed in range(8):
            g, p, mapped, tables = mapped_setup(seed=seed, n=30)
            rng = np.random.default_rng(seed)
            candidates = [int(v) for rec in tables.records.values() for v in rec.retained]
            victims = tuple(sorted(rng.choice(candidates,
                                              size=min(3, len(candidates)),
                                              replace=False).tolist()))
            req = UnlearnRequest(victims, strict_feature_update=True)
            mapped2, tables2, g2 = unlearn(g, mapped, tables, req)
            (scratch_mapped, scratch_tables), g_ref = scratch_rebuild(g, p, victims)
            assert g2.equal_to(g_ref)
            assert mapped2.cids.tolist() == scratch_mapped.cids.tolist()
            assert np.array_equal(mapped2.labels, scratch_mapped.labels)
            assert np.abs(mapped2.features - scratch_mapped.features).max() <= 1e-9
            assert mapped2.edge_cids.tolist() == scratch_mapped.edge_cids.tolist()
            if len(mapped2.edge_weights):
                assert np.abs(mapped2.edge_weights - scratch_mapped.edge_weights).max() <= 1e-9

    def test_filtered_crossless_bit_identical(self):
        feats = np.array([
            [0.0, 0.0], [0.05, 0.0], [0.0, 0.05], [9.0, 9.0],
            [5.0, 0.0], [5.1, 0.0],
        ])
        labels = np.array([0, 0, 0, 0, 1, 1])
        edges = np.array([(0, 1), (0, 2), (1, 2), (1, 3), (4, 5), (2, 4)])
        g = build_graph(edges, feats, labels, num_classes=2)
        p = CommunityPartition.from_assignment(g, {0: 0, 1: 0, 2: 0, 3: 0, 4: 1, 5: 1})
        mapped, tables = build_mapped_graph(g, p)
        mapped2, tables2, g2 = unlearn(g, mapped, tables, UnlearnRequest((3,)))
        assert mapped2.equal_to(mapped)
        assert verify_unlearned(tables2, [3])
        assert not g2.has_node(3)

    def test_vote_flip_matches_scratch(self):
        # removing a retained member flips the majority label
        feats = np.array([
            [0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [3.0, 3.0], [9.9, 9.9],
        ])
        labels = np.array([1, 0, 0, 1, 1])
        edges = np.array([(0, 1), (0, 2), (1, 2), (2, 3), (3, 4)])
        g = build_graph(edges, feats, labels, num_classes=2)
        p = CommunityPartition.from_assignment(g, {i: 0 for i in range(5)})
        mapped, tables = build_mapped_graph(g, p)
        victims = (1, 2)
        assert all(v in tables.records[0].retained.tolist() for v in victims)
        mapped2, tables2, _ = unlearn(g, mapped, tables, UnlearnRequest(victims))
        (scratch_mapped, _), _ = scratch_rebuild(g, p, victims)
        assert mapped2.labels.tolist() == scratch_mapped.labels.tolist()
        assert np.array_equal(mapped2.features, scratch_mapped.features)

    def test_sequential_equals_batch_strict(self):
        for seed in (0, 2, 4):
            g, p, mapped, tables = mapped_setup(seed=seed, n=28)
            rng = np.random.default_rng(seed + 100)
            pool = [int(v) for v in g.ids]
            chosen = rng.choice(pool, size=6, replace=False)
            a, b = tuple(sorted(chosen[:3].tolist())), tuple(sorted(chosen[3:].tolist()))
            m1, t1, g1 = unlearn(g, mapped, tables, UnlearnRequest(a, True))
            m2, t2, g2 = unlearn(g1, m1, t1, UnlearnRequest(b, True))
            mb, tb, gb = unlearn(g, mapped, tables, UnlearnRequest(tuple(sorted(a + b)), True))
            assert g2.equal_to(gb)
            assert m2.cids.tolist() == mb.cids.tolist()
            assert np.abs(m2.features - mb.features).max() <= 1e-12
            assert np.array_equal(m2.labels, mb.labels)
            assert m2.edge_cids.tolist() == mb.edge_cids.tolist()
            if len(m2.edge_weights):
                assert np.abs(m2.edge_weights - mb.edge_weights).max() <= 1e-12

    def test_locality_bound(self):
        g, p, mapped, tables = mapped_setup(seed=7, n=26)
        victims = tuple(int(v) for v in g.ids[:4].tolist())
        infl = influence(tables, UnlearnRequest(victims, True))
        assert len(infl.affected_nodes) <= len(infl.communities) <= len(victims)

    def test_idempotent_error_then_skip(self):
        g, p, mapped, tables = mapped_setup(seed=9)
        victims = (int(g.ids[0]),)
        m1, t1, g1 = unlearn(g, mapped, tables, UnlearnRequest(victims))
        with pytest.raises(ParameterError):
            unlearn(g1, m1, t1, UnlearnRequest(victims))
        m2, t2, g2 = unlearn(g1, m1, t1, UnlearnRequest(victims), on_missing="skip")
        assert m2.equal_to(m1)
        assert g2.equal_to(g1)

    def test_unlearn_everything_warns_empty(self):
        g, p, mapped, tables = mapped_setup(seed=2, n=10)
        victims = tuple(int(v) for v in g.ids.tolist())
        with pytest.warns(UserWarning, match="empty"):
            mapped2, tables2, g2 = unlearn(g, mapped, tables, UnlearnRequest(victims, True))
        assert mapped2.node_count == 0
        assert g2.node_count == 0

    def test_sigma_filter_reapplied(self):
        # with a positive threshold, weakened connections can disappear
        cfg = MapConfig(edge_threshold=0.05)
        g, p, mapped, tables = mapped_setup(seed=11, n=30, edge_prob=0.3, cfg=cfg)
        assert len(mapped.edge_cids) > 0
        victims = tuple(
            int(v) for rec in tables.records.values() for v in rec.retained[:1]
        )[:2]
        mapped2, tables2, _ = unlearn(g, mapped, tables, UnlearnRequest(victims, True))
        for pair, w in zip(mapped2.edge_cids.tolist(), mapped2.edge_weights.tolist()):
            assert w >= cfg.edge_threshold


class TestVerifyUnlearned:
    def test_before_unlearn_false(self):
        g, p, mapped, tables = mapped_setup(seed=0)
        assert not verify_unlearned(tables, [int(g.ids[0])])

    def test_after_unlearn_true(self):
        g, p, mapped, tables = mapped_setup(seed=0)
        victims = (int(g.ids[0]), int(g.ids[3]))
        _, tables2, _ = unlearn(g, mapped, tables, UnlearnRequest(victims))
        assert verify_unlearned(tables2, victims)

    def test_fuzz_50_requests(self):
        g, p, mapped, tables = mapped_setup(seed=13, n=40, edge_prob=0.15)
        rng = np.random.default_rng(99)
        for trial in range(50):
            pool = sorted(tables.membership)
            if len(pool) < 3:
                break
            strict = bool(trial % 2)
            victims = tuple(sorted(rng.choice(pool, size=2, replace=False).tolist()))
            mapped, tables, g = unlearn(g, mapped, tables,
                                        UnlearnRequest(victims, strict))
            assert verify_unlearned(tables, victims)
