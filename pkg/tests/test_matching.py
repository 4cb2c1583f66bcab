"""Hungarian assignment and the cross-camera matcher built on it."""

import numpy as np
import pytest

from sianms.matching import (
    MissingEmbedding,
    build_distance_matrix,
    hungarian,
    match_adjacent,
)
from sianms.scene import BBox2D, CameraModel, CameraRig, Detection2D

from _oracles import brute_force_assignment


def assignment_cost(costs, pairs):
    return sum(float(costs[i, j]) for i, j in pairs)


def check_valid(pairs, masked):
    rows = [i for i, _ in pairs]
    cols = [j for _, j in pairs]
    assert len(set(rows)) == len(rows)
    assert len(set(cols)) == len(cols)
    for i, j in pairs:
        assert not masked[i, j]


class TestHungarian:
    def test_hand_case(self):
        costs = [[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]]
        pairs = hungarian(costs)
        assert pairs == [(0, 1), (1, 0), (2, 2)]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(50)
        for trial in range(120):
            n = int(rng.integers(1, 6))
            m = int(rng.integers(1, 6))
            costs = rng.uniform(-5.0, 5.0, (n, m))
            masked = rng.random((n, m)) < (0.3 if trial % 3 == 0 else 0.0)
            pairs = hungarian(costs, masked)
            check_valid(pairs, masked)
            count, total = brute_force_assignment(costs, masked)
            assert len(pairs) == count
            assert assignment_cost(np.asarray(costs), pairs) == pytest.approx(
                total, abs=1e-9
            )

    def test_rectangular_leaves_surplus_unmatched(self):
        costs = [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]
        pairs = hungarian(costs)
        assert len(pairs) == 2
        count, total = brute_force_assignment(np.asarray(costs))
        assert assignment_cost(np.asarray(costs), pairs) == pytest.approx(total)

    def test_fully_masked_matches_nothing(self):
        costs = np.ones((3, 3))
        masked = np.ones((3, 3), dtype=bool)
        assert hungarian(costs, masked) == []

    def test_empty_matrix(self):
        assert hungarian(np.zeros((0, 0))) == []
        assert hungarian(np.zeros((0, 4))) == []

    def test_single_cell(self):
        assert hungarian([[7.0]]) == [(0, 0)]

    def test_negative_costs(self):
        costs = [[-1.0, -5.0], [-4.0, -2.0]]
        assert hungarian(costs) == [(0, 1), (1, 0)]

    def test_masked_infinity_allowed(self):
        costs = np.array([[np.inf, 1.0], [2.0, np.inf]])
        masked = np.isinf(costs)
        assert hungarian(costs, masked) == [(0, 1), (1, 0)]

    def test_unmasked_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            hungarian(np.array([[np.inf]]))

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            hungarian(np.zeros((2, 2)), np.zeros((2, 3), dtype=bool))
        with pytest.raises(ValueError):
            hungarian(np.zeros(4))


def _det(cam, cls="car", emb=None, uid=None, score=0.9):
    return Detection2D(
        camera_id=cam,
        bbox=BBox2D(0.0, 0.0, 10.0, 10.0),
        class_id=cls,
        score=score,
        embedding=None if emb is None else np.asarray(emb, dtype=float),
        truth_uid=uid,
    )


def _two_camera_rig():
    cams = tuple(
        CameraModel(id=c, fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=1.0, height=1.0)
        for c in ("a", "b", "c")
    )
    return CameraRig(cameras=cams, adjacency=(("a", "b"), ("b", "c")))


class TestDistanceMatrix:
    def test_euclidean_distances(self):
        da = [_det("a", emb=[0.0, 0.0])]
        db = [_det("b", emb=[3.0, 4.0])]
        dm = build_distance_matrix(da, db)
        assert dm.distances[0, 0] == pytest.approx(5.0)
        assert not dm.masked[0, 0]

    def test_cross_class_masked(self):
        dm = build_distance_matrix(
            [_det("a", cls="car", emb=[0.0])], [_det("b", cls="pedestrian", emb=[0.0])]
        )
        assert dm.masked[0, 0]

    def test_missing_embedding_rejected(self):
        with pytest.raises(MissingEmbedding):
            build_distance_matrix([_det("a")], [_det("b", emb=[1.0])])

    def test_dim_mismatch_rejected(self):
        with pytest.raises(MissingEmbedding):
            build_distance_matrix([_det("a", emb=[1.0])], [_det("b", emb=[1.0, 2.0])])


class TestMatchAdjacent:
    def test_assignment_beats_greedy_nearest(self):
        # greedy-nearest would pair a1-b2 (0.4) and leave a2 with b2 taken;
        # the joint optimum pairs a1-b2 and a2-b1 anyway, but from a2's view
        # b1 (0.5) is second choice: total 0.9 beats a1-b1 + a2-b2 = 2.1.
        rig = _two_camera_rig()
        a1, a2 = _det("a", emb=[0.0]), _det("a", emb=[0.5])
        b1, b2 = _det("b", emb=[0.9]), _det("b", emb=[0.4])
        result = match_adjacent(rig, [a1, a2, b1, b2], tau=1.0)
        matched = {(id(p.a), id(p.b)) for p in result.pairs}
        assert matched == {(id(a1), id(b2)), (id(a2), id(b1))}
        assert result.unmatched == []

    def test_threshold_applies_after_assignment(self):
        # both assigned distances exceed tau, so both pairs drop, even though
        # dropping only one and re-pairing could fall under tau
        rig = _two_camera_rig()
        a1, a2 = _det("a", emb=[0.0]), _det("a", emb=[10.0])
        b1, b2 = _det("b", emb=[0.6]), _det("b", emb=[10.6])
        result = match_adjacent(rig, [a1, a2, b1, b2], tau=0.5)
        assert result.pairs == []
        assert set(map(id, result.unmatched)) == {id(a1), id(a2), id(b1), id(b2)}

    def test_classes_never_mix(self):
        rig = _two_camera_rig()
        a1 = _det("a", cls="car", emb=[0.0])
        b1 = _det("b", cls="pedestrian", emb=[0.0])
        result = match_adjacent(rig, [a1, b1], tau=10.0)
        assert result.pairs == []

    def test_earlier_adjacency_entry_wins(self):
        rig = _two_camera_rig()  # adjacency (a, b) then (b, c)
        a1 = _det("a", emb=[0.0])
        b1 = _det("b", emb=[0.1])
        c1 = _det("c", emb=[0.05])
        result = match_adjacent(rig, [a1, b1, c1], tau=1.0)
        assert len(result.pairs) == 1
        pair = result.pairs[0]
        assert (id(pair.a), id(pair.b)) == (id(a1), id(b1))
        assert set(map(id, result.unmatched)) == {id(c1)}

    def test_nonadjacent_cameras_never_pair(self):
        cams = tuple(
            CameraModel(id=c, fx=1.0, fy=1.0, cx=0.0, cy=0.0, width=1.0, height=1.0)
            for c in ("a", "b")
        )
        rig = CameraRig(cameras=cams, adjacency=())
        result = match_adjacent(rig, [_det("a", emb=[0.0]), _det("b", emb=[0.0])], tau=1.0)
        assert result.pairs == []
        assert len(result.unmatched) == 2

    def test_tau_must_be_positive(self):
        with pytest.raises(ValueError):
            match_adjacent(_two_camera_rig(), [], tau=0.0)

    def test_deterministic_for_fixed_input(self):
        rig = _two_camera_rig()
        rng = np.random.default_rng(51)
        dets = [
            _det(cam, emb=rng.standard_normal(4))
            for cam in ("a", "a", "a", "b", "b", "c")
        ]
        first = match_adjacent(rig, dets, tau=5.0)
        second = match_adjacent(rig, dets, tau=5.0)
        assert [(id(p.a), id(p.b)) for p in first.pairs] == [
            (id(p.a), id(p.b)) for p in second.pairs
        ]
