import math

import numpy as np
import pytest

from billinglab import iforest
from billinglab.errors import ArgumentError, FitError
from billinglab.iforest import (
    IsolationTree,
    c_adjustment,
    decision_from_path,
    fit_iforest,
    path_length,
    pseudo_label_iforest,
    score,
)

EULER_GAMMA = 0.5772156649015329


def planted_outlier_data(seed: int, n: int = 100, d: int = 4) -> tuple[np.ndarray, int]:
    """Tight cluster with one gross outlier at >= 10 sigma in every axis."""
    rng = np.random.default_rng(seed)
    X = rng.normal(0.0, 1.0, size=(n, d))
    outlier = int(rng.integers(n))
    X[outlier] = 15.0
    return X, outlier


class TestAdjustment:
    def test_small_sizes(self):
        assert c_adjustment(0) == 0.0
        assert c_adjustment(1) == 0.0
        assert c_adjustment(2) == pytest.approx(2 * EULER_GAMMA - 1.0, abs=1e-15)

    def test_matches_formula_for_larger_sizes(self):
        m = 256
        expected = 2 * (math.log(m - 1) + EULER_GAMMA) - 2 * (m - 1) / m
        assert c_adjustment(m) == pytest.approx(expected, abs=1e-12)


class TestPathLength:
    def _leaf_tree(self, size: int, depth: int) -> IsolationTree:
        return IsolationTree(
            feature=np.array([-1]),
            split=np.array([0.0]),
            left=np.array([-1]),
            right=np.array([-1]),
            size=np.array([size]),
            depth=np.array([depth]),
            max_depth=depth,
        )

    def _chain_tree(self, depth: int, leaf_size: int) -> IsolationTree:
        # internal nodes splitting on feature 0 at 0.5; x < 0.5 descends left
        n = depth + 1
        feature = np.array([0] * depth + [-1])
        split = np.array([0.5] * depth + [0.0])
        left = np.array(list(range(1, depth + 1)) + [-1])
        right = np.array([depth] * depth + [-1])  # shortcut, unused by the probe
        size = np.array([0] * depth + [leaf_size])
        depths = np.arange(n)
        return IsolationTree(feature, split, left, right, size, depths, max_depth=depth)

    def test_size_one_leaf_depth_three(self):
        tree = self._chain_tree(3, leaf_size=1)
        assert path_length(tree, np.array([0.0])) == 3.0

    def test_size_two_leaf_depth_two_gets_adjustment(self):
        tree = self._chain_tree(2, leaf_size=2)
        assert path_length(tree, np.array([0.0])) == pytest.approx(
            2.0 + (2 * EULER_GAMMA - 1.0), abs=1e-12
        )
        assert path_length(tree, np.array([0.0])) == pytest.approx(2.1544313, abs=1e-7)

    def test_single_node_tree_gives_zero(self):
        tree = self._leaf_tree(size=1, depth=0)
        assert path_length(tree, np.array([123.0])) == 0.0

    def test_vectorized_paths_match_scalar_walk(self):
        X, _ = planted_outlier_data(0)
        model = fit_iforest(X, n_estimators=5, seed=3)
        for tree in model.trees:
            vec = iforest._tree_paths(tree, X)
            scalar = np.array([path_length(tree, x) for x in X])
            assert np.allclose(vec, scalar, atol=1e-12)


class TestScores:
    def test_fixed_point_of_the_score_formula(self):
        psi = 256
        assert decision_from_path(np.array([c_adjustment(psi)]), psi)[0] == pytest.approx(0.0, abs=1e-15)

    def test_zero_path_is_maximally_anomalous(self):
        assert decision_from_path(np.array([0.0]), 256)[0] == pytest.approx(-0.5)

    def test_monotone_in_path_length(self):
        paths = np.linspace(0.0, 20.0, 50)
        d = decision_from_path(paths, 128)
        assert np.all(np.diff(d) > 0)

    def test_identical_rows_share_scores(self):
        X = np.vstack([planted_outlier_data(1)[0], planted_outlier_data(1)[0][:1]])
        X[-1] = X[0]
        model = fit_iforest(X, seed=5)
        d = score(model, X)
        assert d[0] == d[-1]


class TestFit:
    def test_two_identical_rows_isolate_at_max_depth(self):
        X = np.array([[1.0, 2.0], [1.0, 2.0]])
        model = fit_iforest(X, n_estimators=10, contamination=0.4, seed=0)
        for tree in model.trees:
            # every split is degenerate; both rows end in a size-2 leaf at depth 1
            paths = iforest._tree_paths(tree, X)
            assert np.all(paths == 1.0 + c_adjustment(2))
        d = score(model, X)
        assert d[0] == d[1]

    def test_refit_same_seed_identical(self):
        X, _ = planted_outlier_data(2)
        a = fit_iforest(X, seed=11)
        b = fit_iforest(X, seed=11)
        assert a.threshold == b.threshold
        for ta, tb in zip(a.trees, b.trees):
            assert np.array_equal(ta.feature, tb.feature)
            assert np.array_equal(ta.split, tb.split)

    def test_needs_two_rows(self):
        with pytest.raises(FitError):
            fit_iforest(np.zeros((1, 3)))

    def test_bad_contamination_rejected(self):
        X, _ = planted_outlier_data(3)
        with pytest.raises(ArgumentError):
            fit_iforest(X, contamination=0.7)

    def test_max_features_rounds_up_to_one(self):
        X, _ = planted_outlier_data(4, d=3)
        model = fit_iforest(X, max_features=0.01, seed=1)
        for tree in model.trees:
            used = set(tree.feature[tree.feature >= 0].tolist())
            assert len(used) <= 1

    def test_subsample_size_is_ceil_of_fraction(self):
        X, _ = planted_outlier_data(5)
        model = fit_iforest(X, subsample_fraction=0.90, seed=1)
        assert model.subsample_size == 90

    def test_depth_cap_is_log2_of_subsample(self):
        X, _ = planted_outlier_data(6)
        model = fit_iforest(X, seed=2)
        cap = math.ceil(math.log2(model.subsample_size))
        for tree in model.trees:
            assert tree.depth.max() <= cap


class TestPlantedOutlier:
    def test_outlier_has_strictly_smallest_average_path(self):
        X, outlier = planted_outlier_data(7)
        model = fit_iforest(X, n_estimators=50, contamination=0.016, seed=7)
        # brute force: average the per-tree walks for every point
        paths = np.zeros(len(X))
        for tree in model.trees:
            paths += np.array([path_length(tree, x) for x in X])
        paths /= len(model.trees)
        assert int(np.argmin(paths)) == outlier

    def test_outlier_is_the_sole_pseudo_label(self):
        X, outlier = planted_outlier_data(8)
        model = fit_iforest(X, n_estimators=50, contamination=0.016, seed=8)
        labels = pseudo_label_iforest(model, X)
        assert labels.n_positive == 1  # floor(0.016 * 100)
        assert labels.labels[outlier] == 1
        d = score(model, X)
        assert np.argmin(d) == outlier


class TestPseudoLabels:
    def test_exact_count_on_fit_data(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(1000, 5))
        model = fit_iforest(X, contamination=0.016, seed=9)
        labels = pseudo_label_iforest(model, X)
        assert labels.n_positive == 16

    def test_labels_match_external_sort_oracle(self):
        rng = np.random.default_rng(10)
        X = rng.normal(size=(300, 4))
        model = fit_iforest(X, contamination=0.05, seed=10)
        result = pseudo_label_iforest(model, X)
        d = score(model, X)
        k = int(math.floor(0.05 * len(X)))
        expected = np.zeros(len(X), dtype=np.int8)
        expected[np.argsort(d, kind="stable")[:k]] = 1
        assert np.array_equal(result.labels, expected)
        assert result.threshold == np.sort(d)[k - 1]

    def test_label_count_too_small_warns(self):
        rng = np.random.default_rng(11)
        X = rng.normal(size=(20, 3))
        model = fit_iforest(X, contamination=0.01, seed=11)
        result = pseudo_label_iforest(model, X)
        assert result.n_positive == 0
        assert result.warning

    def test_new_data_uses_stored_threshold(self):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(200, 3))
        model = fit_iforest(X, contamination=0.05, seed=12)
        fresh = np.vstack([rng.normal(size=(50, 3)), np.full((1, 3), 25.0)])
        result = pseudo_label_iforest(model, fresh)
        d = score(model, fresh)
        assert np.array_equal(result.labels, (d <= model.threshold).astype(np.int8))
        assert result.labels[-1] == 1  # the gross outlier lands under the threshold


class TestRecoveryAcrossSeeds:
    def test_ten_sigma_outlier_always_flagged(self):
        hits = 0
        for seed in range(10):
            X, outlier = planted_outlier_data(100 + seed)
            model = fit_iforest(X, contamination=0.016, seed=seed)
            labels = pseudo_label_iforest(model, X)
            hits += int(labels.labels[outlier] == 1)
        assert hits == 10


class TestSerialization:
    def test_json_round_trip_preserves_scores(self, tmp_path):
        X, _ = planted_outlier_data(13)
        model = fit_iforest(X, seed=13)
        path = tmp_path / "model.json"
        iforest.save_model(model, path)
        back = iforest.load_model(path)
        assert back.threshold == model.threshold
        assert np.array_equal(score(back, X), score(model, X))
