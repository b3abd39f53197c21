import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bignn.assets import load_affordances
from bignn.bimanual import (ONE_HOT_WIDTH, TaxonomyLabel, TaxonomyThresholds,
                            aggregate_level3, build_contact_graph,
                            classify_coordination, classify_precision,
                            classify_spatial, hand_groups, taxonomy_decode,
                            taxonomy_one_hot)
from bignn.scene import (Aabb3, FrameObservation, ObjectInstance,
                         build_scene_graph)


def body(oid, label, center, size=0.08, hand="none"):
    half = size / 2.0
    return ObjectInstance(id=oid, label=label,
                          box=Aabb3(tuple(c - half for c in center),
                                    tuple(c + half for c in center)),
                          hand=hand)


def nested(oid, label, host, size=0.04):
    half = size / 2.0
    center = host.box.center
    return ObjectInstance(id=oid, label=label,
                          box=Aabb3(tuple(c - half for c in center),
                                    tuple(c + half for c in center)))


@pytest.fixture(scope="module")
def affordances():
    return load_affordances("kit")


class TestContactGraph:
    def test_two_holds_two_edges(self, affordances):
        """Right hand on a box, left on a bowl; board, knife, banana and a
        bottle sit free: exactly two contacts survive."""
        table = ObjectInstance(id=0, label="table",
                               box=Aabb3((-1, -1, -0.1), (1, 1, 0.0)))
        right = body(1, "right_hand", [0.3, 0.0, 0.3], hand="right")
        left = body(2, "left_hand", [-0.3, 0.0, 0.3], hand="left")
        boxo = nested(3, "box", right)
        bowl = nested(4, "bowl", left)
        free = [body(5, "cutting_board", [0.0, 0.5, 0.05]),
                body(6, "knife", [0.2, 0.5, 0.05]),
                body(7, "banana", [-0.2, 0.5, 0.05]),
                body(8, "bottle", [0.4, 0.5, 0.05])]
        frame = FrameObservation(0, [table, right, left, boxo, bowl] + free)
        graph = build_scene_graph(frame, None, 5.0, 0.01, affordances)
        cg = build_contact_graph(graph, "table")
        assert int(np.sum(cg.adjacency)) // 2 == 2
        groups = hand_groups(cg)
        assert groups.left == {2, 4} and groups.right == {1, 3}
        assert not groups.merged

    def test_empty_scene_zero_matrix(self, affordances):
        frame = FrameObservation(0, [])
        graph = build_scene_graph(frame, None, 1.0, 0.01, affordances)
        cg = build_contact_graph(graph, "table")
        assert cg.adjacency.size == 0

    def test_support_surface_excluded(self, affordances):
        table = ObjectInstance(id=0, label="table",
                               box=Aabb3((-1, -1, -0.1), (1, 1, 0.0)))
        cup = ObjectInstance(id=1, label="cup",
                             box=Aabb3((-0.03, -0.03, 0.0), (0.03, 0.03, 0.08)))
        graph = build_scene_graph(FrameObservation(0, [table, cup]),
                                  None, 5.0, 0.01, affordances)
        assert any(e.relation == "contact" for e in graph.spatial_edges)
        cg = build_contact_graph(graph, "table")
        assert 0 not in cg.node_ids
        assert int(np.sum(cg.adjacency)) == 0

    def test_symmetric_zero_diagonal_on_fuzz(self, affordances):
        rng = np.random.Generator(np.random.PCG64(3))
        for _ in range(50):
            objs = [body(i, "cup", rng.uniform(-0.2, 0.2, 3),
                         size=float(rng.uniform(0.05, 0.3)))
                    for i in range(int(rng.integers(2, 7)))]
            graph = build_scene_graph(FrameObservation(0, objs), None, 5.0,
                                      0.01, affordances)
            cg = build_contact_graph(graph, "table")
            assert np.array_equal(cg.adjacency, cg.adjacency.T)
            assert np.all(np.diag(cg.adjacency) == 0)
            assert set(np.unique(cg.adjacency)) <= {0, 1}


class TestHandGroups:
    def _cg_from_adjacency(self, adj, hands):
        from bignn.bimanual import ContactGraph
        return ContactGraph(node_ids=list(range(adj.shape[0])), hands=hands,
                            adjacency=adj)

    def test_chain_merges_hands(self):
        """right hand - screwdriver - hard disk - left hand chain: the tools
        fall in both groups; an unconnected saw in none."""
        n = 5  # 0 right hand, 1 screwdriver, 2 hard disk, 3 left hand, 4 saw
        adj = np.zeros((n, n), dtype=np.uint8)
        for a, b in ((0, 1), (1, 2), (2, 3)):
            adj[a, b] = adj[b, a] = 1
        cg = self._cg_from_adjacency(adj, {"right": 0, "left": 3})
        groups = hand_groups(cg)
        assert groups.merged
        assert {1, 2} <= groups.left and {1, 2} <= groups.right
        assert 4 not in groups.left | groups.right

    def test_no_contacts(self):
        cg = self._cg_from_adjacency(np.zeros((3, 3), dtype=np.uint8),
                                     {"right": 0, "left": 1})
        groups = hand_groups(cg)
        assert groups.left == {1} and groups.right == {0}
        assert not groups.merged

    def test_missing_hand_empty_group(self):
        cg = self._cg_from_adjacency(np.zeros((2, 2), dtype=np.uint8),
                                     {"right": 0})
        groups = hand_groups(cg)
        assert groups.left == set()

    def test_matches_union_find_oracle(self):
        rng = np.random.Generator(np.random.PCG64(99))
        for _ in range(1000):
            n = 12
            adj = np.zeros((n, n), dtype=np.uint8)
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.random() < 0.15:
                        adj[i, j] = adj[j, i] = 1
            cg = self._cg_from_adjacency(adj, {"left": 0, "right": 1})
            groups = hand_groups(cg)

            parent = list(range(n))

            def find(x):
                while parent[x] != x:
                    parent[x] = parent[parent[x]]
                    x = parent[x]
                return x

            for i in range(n):
                for j in range(i + 1, n):
                    if adj[i, j]:
                        parent[find(i)] = find(j)
            left = {k for k in range(n) if find(k) == find(0)}
            right = {k for k in range(n) if find(k) == find(1)}
            assert groups.left == left
            assert groups.right == right
            assert groups.merged == (find(0) == find(1))


class TestSpatialClassifier:
    TH = TaxonomyThresholds(d_close=0.05, d_stacked=0.15)

    def test_paper_example_close(self):
        assert classify_spatial(0.04, self.TH) == "close"

    def test_crossed(self):
        assert classify_spatial(0.10, self.TH) == "crossed"

    def test_boundary_is_stacked(self):
        assert classify_spatial(0.15, self.TH) == "stacked"

    @given(st.floats(0, 2))
    @settings(max_examples=200, deadline=None)
    def test_partitions_domain(self, d):
        labels = [classify_spatial(d, self.TH)]
        assert len(labels) == 1 and labels[0] in ("close", "crossed", "stacked")


class TestPrecisionClassifier:
    TH = TaxonomyThresholds(d_low_precision=0.08, d_medium_precision=0.16)

    def test_zero_range_low(self):
        assert classify_precision(0.3, 0.3, self.TH) == "low"

    def test_boundary_is_medium(self):
        assert classify_precision(0.0, 0.08, self.TH) == "medium"

    def test_above_medium_threshold_high(self):
        assert classify_precision(0.0, 0.25, self.TH) == "high"

    def test_inverted_range_rejected(self):
        with pytest.raises(ValueError):
            classify_precision(0.5, 0.4, self.TH)

    @given(st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=200, deadline=None)
    def test_partitions_domain(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert classify_precision(lo, hi, self.TH) in ("low", "medium", "high")


class TestCoordinationClassifier:
    TH = TaxonomyThresholds()

    def test_mirrored_trajectories(self):
        t = np.linspace(0, 2 * np.pi, 40)
        speed = 0.05 * (1.5 + np.sin(t))
        right = np.cumsum(np.stack([speed, 0 * t, 0.3 * speed], 1), axis=0)
        left = right * np.array([-1.0, 1.0, 1.0])
        out = classify_coordination(left, right, self.TH)
        assert out == ("coordinated", "symmetric", "none")

    def test_one_hand_static(self):
        t = np.linspace(0, 1, 30)
        right = np.stack([np.sin(4 * t), 0 * t, t], axis=1)
        left = np.zeros_like(right)
        out = classify_coordination(left, right, self.TH)
        assert out == ("uncoordinated", "asymmetric", "right")

    def test_independent_walks_mostly_uncoordinated(self):
        hits = 0
        for seed in range(100):
            rng = np.random.Generator(np.random.PCG64(seed))
            left = np.cumsum(rng.normal(0, 0.01, (60, 3)), axis=0)
            right = np.cumsum(rng.normal(0, 0.01, (60, 3)), axis=0)
            coordination, _, _ = classify_coordination(left, right, self.TH)
            hits += coordination == "uncoordinated"
        assert hits >= 90

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="trajectory too short"):
            classify_coordination(np.zeros((1, 3)), np.zeros((1, 3)), self.TH)


class TestOneHot:
    def _labels(self):
        out = []
        for coordination in ("coordinated", "uncoordinated"):
            for symmetry in ("symmetric", "asymmetric"):
                for dominant in (("none",) if symmetry == "symmetric"
                                 else ("left", "right", "none")):
                    for spatial in ("close", "crossed", "stacked"):
                        for precision in ("low", "medium", "high"):
                            out.append(TaxonomyLabel(coordination, symmetry,
                                                     dominant, spatial, precision))
        return out

    def test_exactly_five_ones(self):
        for label in self._labels():
            vec = taxonomy_one_hot(label)
            assert vec.shape == (ONE_HOT_WIDTH,)
            assert np.sum(vec) == 5

    def test_precision_flip_changes_two_slots(self):
        a = TaxonomyLabel("coordinated", "symmetric", "none", "close", "low")
        b = TaxonomyLabel("coordinated", "symmetric", "none", "close", "high")
        assert int(np.sum(taxonomy_one_hot(a) != taxonomy_one_hot(b))) == 2

    def test_round_trip_bijection(self):
        seen = set()
        for label in self._labels():
            vec = taxonomy_one_hot(label)
            seen.add(vec.tobytes())
            assert taxonomy_decode(vec) == label
        assert len(seen) == len(self._labels())

    def test_invalid_dominant_for_symmetric(self):
        with pytest.raises(ValueError, match="asymmetric"):
            TaxonomyLabel("coordinated", "symmetric", "left", "close", "low")


class TestAggregateLevel3:
    def test_zero_feature_prefix(self):
        one_hot = taxonomy_one_hot(
            TaxonomyLabel("coordinated", "symmetric", "none", "close", "low"))
        out = aggregate_level3(np.zeros(16), one_hot)
        assert out.shape == (29,)
        assert np.all(out[:16] == 0.0)

    def test_width_16_plus_13(self):
        one_hot = np.zeros(13)
        one_hot[[0, 2, 6, 7, 10]] = 1.0
        assert aggregate_level3(np.ones(16), one_hot).shape == (29,)

    def test_taxonomy_change_leaves_prefix(self):
        g = np.arange(8.0)
        a = aggregate_level3(g, taxonomy_one_hot(
            TaxonomyLabel("coordinated", "symmetric", "none", "close", "low")))
        b = aggregate_level3(g, taxonomy_one_hot(
            TaxonomyLabel("uncoordinated", "asymmetric", "left", "stacked", "high")))
        assert np.array_equal(a[:8], b[:8])
