import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from mhpseq import metrics as mt
from mhpseq.errors import ContractViolation
from mhpseq.numerics import make_rng

seeds = st.integers(0, 2**32 - 1)
absdiff = lambda a, b: float(np.abs(np.asarray(a) - np.asarray(b)).sum())


class TestOracleAndDisplacement:
    def test_oracle(self):
        assert mt.oracle_metric(absdiff, [3.0], 1.0) == 2.0
        assert mt.oracle_metric(absdiff, [7.0, 0.0, -4.0], 0.0) == 0.0
        assert mt.oracle_metric(absdiff, [2.0, 5.0], 0.0) == 2.0
        with pytest.raises(ContractViolation):
            mt.oracle_metric(absdiff, [], 0.0)

    @given(preds=st.lists(st.floats(-100, 100), min_size=1, max_size=6), extra=st.floats(-100, 100),
           y=st.floats(-100, 100))
    def test_oracle_monotone(self, preds, extra, y):
        value = mt.oracle_metric(absdiff, preds, y)
        assert all(value <= absdiff(x, y) for x in preds)
        assert mt.oracle_metric(absdiff, preds + [extra], y) <= value

    def test_fde_ade(self):
        t = make_rng(0).normal(size=(4, 2))
        assert mt.fde_ade(t, t) == (0.0, 0.0)
        f, a = mt.fde_ade(t + [3.0, 4.0], t)
        assert f == pytest.approx(5.0) and a == pytest.approx(5.0)
        f, a = mt.fde_ade([[0.0, 0.0], [3.0, 4.0]], np.zeros((2, 2)))
        assert (f, a) == (5.0, 2.5)
        with pytest.raises(ContractViolation):
            mt.fde_ade(t, t[:3])

    def test_flatten_roundtrip(self):
        pts = np.arange(12.0).reshape(2, 3, 2)
        np.testing.assert_array_equal(mt.flatten(pts)[0], [0, 1, 2, 3, 4, 5])
        np.testing.assert_array_equal(mt.unflatten(mt.flatten(pts)), pts)


class TestPolytope:
    def test_tau_one_is_bounding_box(self):
        x = make_rng(0).normal(size=(200, 3))
        p = mt.fit_polytope(x, 1.0)
        np.testing.assert_array_equal(p.lower, x.min(0))
        np.testing.assert_array_equal(p.upper, x.max(0))
        assert p.contains(x).all()

    def test_single_sample(self):
        p = mt.fit_polytope([[1.0, 2.0]], 0.5)
        np.testing.assert_array_equal(p.lower, [1.0, 2.0])
        np.testing.assert_array_equal(p.upper, [1.0, 2.0])

    @given(seed=seeds)
    def test_containment_monte_carlo(self, seed):
        x = make_rng(seed).standard_normal(1000)
        p = mt.fit_polytope(x, 0.85)
        assert abs(p.contains(x[:, None]).mean() - 0.85) <= 0.03

    @given(seed=seeds, tau=st.floats(0.05, 1.0))
    def test_lower_below_upper(self, seed, tau):
        p = mt.fit_polytope(make_rng(seed).normal(size=(50, 4)), tau)
        assert np.all(p.lower <= p.upper)

    def test_errors(self):
        with pytest.raises(ContractViolation):
            mt.fit_polytope(np.zeros((0, 2)), 0.5)
        with pytest.raises(ContractViolation):
            mt.fit_polytope(np.zeros((3, 2)), 0.0)
        with pytest.raises(ContractViolation):
            mt.fit_polytope(np.zeros((3, 2)), 1.0).contains(np.zeros(3))


class TestDiscreteRelabel:
    def _boxes(self):
        x = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0], [6.0, 6.0]])
        y = np.array([0, 0, 1, 1])
        return x, y, mt.fit_class_polytopes(x, y, 1.0)

    def test_disjoint_singletons(self):
        x, y, polys = self._boxes()
        assert [r.label_set for r in mt.relabel_discrete(x, y, polys)] == [frozenset({c}) for c in y]

    def test_overlap(self):
        x = np.array([[0.0], [2.0], [1.0], [3.0]])
        y = np.array([0, 0, 1, 1])
        sets = [r.label_set for r in mt.relabel_discrete(x, y, mt.fit_class_polytopes(x, y, 1.0))]
        assert sets == [{0}, {0, 1}, {0, 1}, {1}]

    @given(seed=seeds, tau=st.floats(0.1, 1.0))
    def test_own_label_always_present(self, seed, tau):
        rng = make_rng(seed)
        x, y = rng.normal(size=(60, 2)), rng.integers(0, 3, 60)
        assume(len(set(y.tolist())) == 3)
        polys = mt.fit_class_polytopes(x, y, tau)
        rel = mt.relabel_discrete(x, y, polys)
        assert all(yi in r.label_set for yi, r in zip(y.tolist(), rel))
        mask = mt.label_mask_discrete(x, y, polys, 3)
        assert [set(np.flatnonzero(m)) for m in mask] == [set(r.label_set) for r in rel]

    def test_dimension_mismatch(self):
        _, _, polys = self._boxes()
        with pytest.raises(ContractViolation):
            mt.relabel_discrete(np.zeros((1, 3)), [0], polys)


class TestPrecisionRecall:
    def test_examples(self):
        assert mt.pr_re_m2({"L", "S", "R"}, {"L", "S"}) == (pytest.approx(2 / 3), 1.0)
        assert mt.pr_re_m2({1, 2}, {1, 2}) == (1.0, 1.0)
        assert mt.pr_re_m2({0}, {1}) == (0.0, 0.0)
        with pytest.raises(ContractViolation):
            mt.pr_re_m2(set(), {1})

    @given(f=st.sets(st.integers(0, 5), min_size=1), Y=st.sets(st.integers(0, 5), min_size=1))
    def test_ranges_and_subset_identities(self, f, Y):
        pr, re = mt.pr_re_m2(f, Y)
        assert 0 <= pr <= 1 and 0 <= re <= 1
        assert (pr == 1) == f.issubset(Y)
        assert (re == 1) == Y.issubset(f)
        fm, Ym = np.zeros((1, 6), bool), np.zeros((1, 6), bool)
        fm[0, list(f)], Ym[0, list(Y)] = True, True
        prm, rem = mt.pr_re_m2_masks(fm, Ym)
        assert (prm[0], rem[0]) == pytest.approx((pr, re))

    def test_f1(self):
        assert mt.f1(1.0, 1.0) == 1.0
        assert mt.f1(0.0, 0.0) == 0.0
        assert mt.f1(0.5, 1.0) == pytest.approx(2 / 3)


class TestMeanShift:
    def test_two_blobs(self):
        rng = make_rng(0)
        a, b = rng.normal(0, 1, size=(100, 2)), rng.normal(0, 1, size=(100, 2)) + [100.0, 0.0]
        cm = mt.mean_shift(np.vstack([a, b]), 10.0)
        assert len(cm.centers) == 2
        centers = sorted(cm.centers.tolist())
        assert np.linalg.norm(np.array(centers[0]) - a.mean(0)) < 1
        assert np.linalg.norm(np.array(centers[1]) - b.mean(0)) < 1
        assert len(set(cm.labels[:100])) == 1 and len(set(cm.labels[100:])) == 1

    def test_single_point(self):
        cm = mt.mean_shift([[3.0, 4.0]], 1.0)
        np.testing.assert_array_equal(cm.centers, [[3.0, 4.0]])

    def test_identical_points(self):
        cm = mt.mean_shift(np.ones((10, 3)), "auto")
        assert len(cm.centers) == 1 and np.all(cm.labels == 0)

    def test_bad_bandwidth(self):
        with pytest.raises(ContractViolation):
            mt.mean_shift(np.ones((3, 2)), 0.0)
        with pytest.raises(ContractViolation):
            mt.mean_shift(np.zeros((0, 2)), 1.0)

    def test_auto_bandwidth(self):
        x = make_rng(1).normal(size=(50, 2))
        from scipy.spatial.distance import pdist
        assert mt.auto_bandwidth(x) == pytest.approx(0.5 * np.median(pdist(x)))

    def test_modes_separated_and_every_point_assigned(self):
        x = make_rng(3).normal(size=(300, 2)) * [4.0, 1.0]
        cm = mt.mean_shift(x, 1.5)
        assert len(cm.labels) == 300 and cm.labels.max() < len(cm.centers)
        if len(cm.centers) > 1:
            from scipy.spatial.distance import pdist
            assert pdist(cm.centers).min() >= 0.75

    def test_chunking_invariant(self):
        x = make_rng(4).normal(size=(120, 2))
        a, b = mt.mean_shift(x, 0.8, chunk=7), mt.mean_shift(x, 0.8, chunk=1024)
        np.testing.assert_allclose(a.centers, b.centers)
        np.testing.assert_array_equal(a.labels, b.labels)


class TestContinuousRelabel:
    def _setup(self, gap):
        rng = make_rng(0)
        inputs = np.vstack([rng.normal(0, 1, (40, 2)), rng.normal(0, 1, (40, 2)) + [gap, 0.0]])
        labels = np.vstack([rng.normal(0, 0.1, (40, 2)), rng.normal(0, 0.1, (40, 2)) + [50.0, 0.0]])
        cm = mt.mean_shift(labels, 5.0)
        return inputs, labels, cm, mt.fit_cluster_polytopes(inputs, cm, 1.0)

    def test_disjoint_inputs_own_cluster(self):
        inputs, labels, cm, polys = self._setup(gap=100.0)
        own = mt.assign_clusters(cm, labels)
        rel = mt.relabel_continuous(inputs, cm, polys, own)
        assert all(r.label_set == {o} for r, o in zip(rel, own))

    def test_shared_inputs_get_all_centers(self):
        inputs, labels, cm, polys = self._setup(gap=0.0)
        rel = mt.relabel_continuous(np.zeros((1, 2)), cm, polys, [0])
        assert rel[0].label_set == {0, 1}
        centers = mt.label_centers(rel, cm)[0]
        assert centers.shape == (2, 2)

    def test_empty_falls_back_to_own(self):
        inputs, labels, cm, polys = self._setup(gap=100.0)
        rel = mt.relabel_continuous(np.array([[1e6, 1e6]]), cm, polys, [1])
        assert rel[0].label_set == {1}


class TestLM2:
    def test_singleton_reduction(self):
        assert mt.l_m2(absdiff, [3.0], [1.0]) == 2.0

    def test_arithmetic(self):
        assert mt.l_m2(absdiff, [0.0, 2.0], [0.0]) == pytest.approx(2 / 3)

    def test_equal_sets(self):
        assert mt.l_m2(absdiff, [1.0, 5.0, -2.0], [5.0, -2.0, 1.0]) == 0.0

    def test_empty(self):
        with pytest.raises(ContractViolation):
            mt.l_m2(absdiff, [], [1.0])

    @given(x=st.floats(-50, 50), y=st.floats(-50, 50))
    def test_singleton_any_metric(self, x, y):
        assert mt.l_m2(absdiff, [x], [y]) == absdiff(x, y)

    @given(f=st.lists(st.integers(-5, 5), min_size=1, max_size=5),
           Y=st.lists(st.integers(-5, 5), min_size=1, max_size=5))
    def test_zero_iff_mutual_cover_and_symmetry(self, f, Y):
        value = mt.l_m2(absdiff, f, Y)
        assert (value == 0) == (set(f) == set(Y))
        assert value == pytest.approx(mt.l_m2(absdiff, Y, f))

    def test_with_fde_on_sequences(self):
        truth = np.zeros((3, 2))
        preds = [truth + [3.0, 4.0], truth]
        assert mt.l_m2(mt.fde, preds, [truth]) == pytest.approx(5.0 / 3)
