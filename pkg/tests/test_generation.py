import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mhpseq.errors import ContractViolation
from mhpseq.generation import (InferenceConfig, build_tree, check_split, choose_tree_leaves, choose_tree_paths,
                               closed_loop, infer, merge, tree_diameter)
from mhpseq.models import GeneratorModel
from mhpseq.numerics import make_rng


def _generator(M=3, H=6, seed=0, identical=False, spread=1.0):
    model = GeneratorModel.init(H, M, make_rng(seed), scale=10.0)
    params = dict(model.params)
    for m in range(M):
        if identical:
            params[f"head{m}.weight"] = params["head0.weight"]
            params[f"head{m}.bias"] = params["head0.bias"]
        else:
            # fixed, well separated offsets per head
            angle = 2 * np.pi * m / M
            params[f"head{m}.bias"] = spread * np.array([np.cos(angle), np.sin(angle)])
    return model.with_params(params)


def _shp_twin(model):
    keep = {k: v for k, v in model.params.items() if not k.startswith("head") or k.startswith("head0.")}
    return GeneratorModel(model.hidden_dim, 1, model.input_dim, model.scale, keep)


SEED = np.array([[0.0, -10.0], [0.0, -8.0], [0.0, -6.0]])


class FakeTree:
    """Depth-1 tree over fixed leaves, enough for the selection helpers."""

    def __init__(self, leaves, M):
        self.points = [np.asarray(leaves, dtype=float)]
        self.num_hypotheses = M

    leaves = property(lambda self: self.points[-1])
    depth = property(lambda self: 1)

    def path(self, leaf):
        return self.points[0][[leaf]]


class TestTree:
    @pytest.mark.parametrize("M, d", [(3, 1), (3, 3), (2, 4), (1, 5)])
    def test_leaf_count(self, M, d):
        model = _generator(M)
        state = model.encode(SEED)
        tree = build_tree(model, SEED[-1], state, d)
        assert tree.depth == d and len(tree.leaves) == M ** d

    def test_depth_one_is_heads(self):
        model = _generator(3)
        state = model.encode(SEED)
        tree = build_tree(model, SEED[-1], state, 1)
        np.testing.assert_array_equal(tree.leaves, model.heads(state, SEED[-1]))

    def test_children_follow_parents(self):
        model = _generator(2)
        state = model.encode(SEED)
        tree = build_tree(model, SEED[-1], state, 3)
        for layer in range(1, 3):
            for j, child in enumerate(tree.points[layer]):
                parent = tree.points[layer - 1][j // 2]
                parent_state = tree.node_state(layer - 1, j // 2)
                np.testing.assert_allclose(child, model.heads(parent_state, parent)[j % 2], atol=1e-12)

    def test_identical_heads_collapse(self):
        model = _generator(3, identical=True)
        tree = build_tree(model, SEED[-1], model.encode(SEED), 3)
        for layer in tree.points:
            assert np.all(layer == layer[0])
        assert not check_split(tree, 1e-9)

    def test_paths_are_parent_chains(self):
        model = _generator(3)
        tree = build_tree(model, SEED[-1], model.encode(SEED), 3)
        for leaf in choose_tree_leaves(tree, SEED[-1]):
            idx = tree.path_indices(leaf)
            assert len(idx) == 3 and idx[-1] == leaf
            assert all(idx[k + 1] // 3 == idx[k] for k in range(2))
        paths = choose_tree_paths(tree, SEED[-1])
        assert len(paths) == 3 and all(p.shape == (3, 2) for p in paths)

    def test_bad_depth(self):
        model = _generator(2)
        with pytest.raises(ContractViolation):
            build_tree(model, SEED[-1], model.encode(SEED), 0)


class TestSplitAndMerge:
    def test_identical_leaves(self):
        assert not check_split(FakeTree([[1.0, 1.0]] * 4, 2), 0.5)

    def test_threshold_strict(self):
        assert check_split(FakeTree([[0.0, 0.0], [10.0, 0.0]], 2), 5.0)
        assert not check_split(FakeTree([[0.0, 0.0], [5.0, 0.0]], 2), 5.0)

    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 300))
    def test_diameter_matches_brute_force(self, seed, n):
        pts = make_rng(seed).normal(size=(n, 2))
        if seed % 3 == 0:
            pts[:, 1] = 2 * pts[:, 0]  # collinear sets exercise the fallback
        brute = max(np.linalg.norm(a - b) for a, b in itertools.combinations(pts, 2))
        assert tree_diameter(pts) == pytest.approx(brute, rel=1e-12)

    def test_merge(self):
        np.testing.assert_array_equal(merge([(0, 0), (2, 0), (4, 0)]), [2.0, 0.0])
        np.testing.assert_array_equal(merge([(3.5, -1.0)]), [3.5, -1.0])
        with pytest.raises(ContractViolation):
            merge(np.zeros((0, 2)))

    @given(seed=st.integers(0, 2**32 - 1))
    def test_merge_permutation_invariant(self, seed):
        rng = make_rng(seed)
        pts = rng.normal(size=(5, 2))
        np.testing.assert_allclose(merge(pts[rng.permutation(5)]), merge(pts), atol=1e-14)

    def test_identical_points_merge_exactly(self):
        p = np.array([[0.1, 0.7]] * 3)
        assert np.array_equal(merge(p), p[0])


class TestChoosePaths:
    def test_two_leaves_snap(self):
        tree = FakeTree([[1.0, 0.0], [0.0, 1.0]], 2)
        picks = choose_tree_leaves(tree, [0.0, 0.0])
        assert sorted(picks) == [0, 1]

    def test_same_angle(self):
        tree = FakeTree([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]], 3)
        angles = {np.arctan2(*tree.path(i)[-1][::-1]) for i in choose_tree_leaves(tree, [0.0, 0.0])}
        assert len(angles) == 1

    def test_even_split(self):
        ang = np.deg2rad(np.arange(0, 91, 1.0))
        tree = FakeTree(np.c_[np.cos(ang), np.sin(ang)], 3)
        picked = sorted(np.rad2deg(ang[choose_tree_leaves(tree, [0.0, 0.0])]))
        assert picked == pytest.approx([15.0, 45.0, 75.0])

    def test_range_across_pi(self):
        ang = np.deg2rad([170.0, 180.0, -170.0])
        tree = FakeTree(np.c_[np.cos(ang), np.sin(ang)], 3)
        assert sorted(choose_tree_leaves(tree, [0.0, 0.0])) == [0, 1, 2]


class TestInfer:
    def test_identical_heads_never_split(self):
        model = _generator(3, identical=True)
        res = infer(model, SEED, InferenceConfig(4, 12, 1e-9))
        assert not res.did_split
        assert res.hypotheses().shape == (1, 12, 2)

    def test_identical_heads_equal_closed_loop_shp(self):
        model = _generator(3, identical=True)
        res = infer(model, SEED, InferenceConfig(3, 10, 0.5))
        assert np.array_equal(res.hypotheses()[0], closed_loop(_shp_twin(model), SEED, 10))

    def test_shp_never_splits(self):
        model = _shp_twin(_generator(3))
        assert not infer(model, SEED, InferenceConfig(3, 6, 1e-9)).did_split

    def test_immediate_split(self):
        model = _generator(3, spread=2.0)
        res = infer(model, SEED, InferenceConfig(3, 10, 1e-6))
        assert res.did_split and len(res.trunk) == 0
        assert res.hypotheses().shape == (3, 10, 2)

    @given(d=st.integers(1, 4), l=st.integers(1, 12), thr=st.floats(0.01, 200.0))
    def test_output_length(self, d, l, thr):
        model = _generator(2, H=4, spread=0.3)
        hyps = infer(model, SEED, InferenceConfig(d, l, thr)).hypotheses()
        assert hyps.shape[1] == l and hyps.shape[0] in (1, 2)

    def test_branch_starts_follow_chosen_paths(self):
        model = _generator(3, spread=1.0)
        res = infer(model, SEED, InferenceConfig(2, 8, 1e-6))
        tree = build_tree(model, SEED[-1], model.encode(SEED), 2)
        expected = np.stack(choose_tree_paths(tree, SEED[-1]))
        np.testing.assert_allclose(res.branches[:, :2], expected, atol=1e-12)

    def test_late_split(self):
        # threshold above the first tree's spread but below later ones: trunk then branches
        model = _generator(3, spread=0.2)
        tree = build_tree(model, SEED[-1], model.encode(SEED), 2)
        first = tree_diameter(tree.leaves)
        res = infer(model, SEED, InferenceConfig(2, 15, first * 1.05))
        assert res.did_split and len(res.trunk) > 0
        assert res.hypotheses().shape == (3, 15, 2)
        # every branch continues from the same trunk
        assert np.all(res.hypotheses()[:, :len(res.trunk)] == res.trunk)

    def test_config_validation(self):
        for bad in [(0, 5, 1.0), (3, 0, 1.0), (3, 5, 0.0)]:
            with pytest.raises(ContractViolation):
                InferenceConfig(*bad)

    def test_bad_seed(self):
        with pytest.raises(ContractViolation):
            infer(_generator(2), np.zeros((0, 2)), InferenceConfig())
