import itertools

import numpy as np
import pytest

from krigeforest import from_arrays
from krigeforest.forest import (
    fit_forest,
    forest_from_dataset,
    permutation_importance,
    qrf_quantile,
    qrf_weights,
    rf_predict,
)


class TestFitForest:
    def test_single_leaf_degenerate_tree(self, rng):
        X = rng.uniform(0, 1, size=(6, 1))
        y = rng.standard_normal(6)
        model = fit_forest(X, y, n_trees=1, min_node_size=6, bootstrap=False)
        pred = rf_predict(model, rng.uniform(0, 1, size=(4, 1)))
        np.testing.assert_allclose(pred, np.mean(y))

    def test_default_m_is_third_of_p(self, rng):
        X = rng.uniform(0, 1, size=(20, 7))
        y = rng.standard_normal(20)
        model = fit_forest(X, y, n_trees=2)
        assert model.m == 3  # ceil(7/3)

    def test_m_equals_p_is_bagging(self, rng):
        X = rng.uniform(0, 1, size=(30, 2))
        y = X[:, 0] + rng.standard_normal(30)
        model = fit_forest(X, y, n_trees=5, m=2)
        assert model.m == 2

    def test_constant_response_single_leaves(self, rng):
        X = rng.uniform(0, 1, size=(20, 2))
        model = fit_forest(X, np.full(20, 3.0), n_trees=3)
        np.testing.assert_allclose(rf_predict(model, X), 3.0)

    def test_invalid_m_rejected(self, rng):
        X = rng.uniform(0, 1, size=(10, 2))
        with pytest.raises(ValueError):
            fit_forest(X, np.zeros(10), n_trees=1, m=5)

    def test_greedy_split_trace_small_instance(self):
        # p=1, no bootstrap, m=1: the root split must minimize total child SSE
        X = np.array([[1.0], [2.0], [3.0], [10.0], [11.0], [12.0]])
        y = np.array([1.0, 1.2, 0.8, 5.0, 5.2, 4.8])
        model = fit_forest(X, y, n_trees=1, m=1, min_node_size=3, bootstrap=False)
        tree = model.trees[0]
        assert tree.feature[0] == 0
        assert tree.threshold[0] == pytest.approx(6.5)  # midpoint of 3 and 10
        np.testing.assert_allclose(rf_predict(model, [[0.0]]), np.mean(y[:3]))
        np.testing.assert_allclose(rf_predict(model, [[20.0]]), np.mean(y[3:]))

    def test_oob_complement_of_bootstrap(self, rng):
        X = rng.uniform(0, 1, size=(40, 2))
        y = rng.standard_normal(40)
        model = fit_forest(X, y, n_trees=5, seed=3)
        for tree, oob in zip(model.trees, model.oob_indices):
            in_bag = np.unique(np.concatenate([r for r in tree.leaf_rows if r is not None]))
            assert np.intersect1d(in_bag, oob).size == 0
            assert np.union1d(in_bag, oob).size == 40


class TestPredict:
    def test_range_containment(self):
        for trial in range(20):
            rng = np.random.default_rng(6000 + trial)
            X = rng.uniform(0, 1, size=(50, 3))
            y = rng.standard_normal(50) * 10
            model = fit_forest(X, y, n_trees=20, seed=trial)
            pred = rf_predict(model, rng.uniform(-1, 2, size=(30, 3)))
            assert pred.min() >= y.min() - 1e-12 and pred.max() <= y.max() + 1e-12

    def test_single_tree_equals_tree_prediction(self, rng):
        X = rng.uniform(0, 1, size=(30, 2))
        y = rng.standard_normal(30)
        model = fit_forest(X, y, n_trees=1, seed=1)
        Xnew = rng.uniform(0, 1, size=(5, 2))
        np.testing.assert_array_equal(rf_predict(model, Xnew), model.trees[0].predict(Xnew))

    def test_reproducible_across_thread_counts(self, rng):
        X = rng.uniform(0, 1, size=(60, 3))
        y = X[:, 0] * 3 + rng.standard_normal(60)
        m1 = fit_forest(X, y, n_trees=8, seed=42, n_threads=1)
        m4 = fit_forest(X, y, n_trees=8, seed=42, n_threads=4)
        Xnew = rng.uniform(0, 1, size=(10, 3))
        np.testing.assert_array_equal(rf_predict(m1, Xnew), rf_predict(m4, Xnew))
        np.testing.assert_array_equal(
            qrf_quantile(m1, Xnew, [0.05, 0.95]), qrf_quantile(m4, Xnew, [0.05, 0.95])
        )

    def test_categorical_split_and_unseen_level(self, rng):
        n = 60
        level = rng.integers(0, 3, n).astype(float)
        y = np.array([0.0, 5.0, 10.0])[level.astype(int)] + 0.1 * rng.standard_normal(n)
        X = np.column_stack([level, rng.uniform(0, 1, n)])
        model = fit_forest(X, y, n_trees=10, seed=0, categorical=(0,))
        pred = rf_predict(model, np.array([[0.0, 0.5], [2.0, 0.5]]))
        assert pred[0] < 2.0 and pred[1] > 8.0
        unseen = rf_predict(model, np.array([[7.0, 0.5]]))  # level never trained on
        assert np.isfinite(unseen[0])


class TestSplitOptimality:
    def test_exhaustive_small_instances(self):
        for trial in range(100):
            rng = np.random.default_rng(7000 + trial)
            n = int(rng.integers(4, 13))
            X = rng.uniform(0, 1, size=(n, 1))
            y = rng.standard_normal(n)
            model = fit_forest(X, y, n_trees=1, m=1, min_node_size=1, bootstrap=False)
            tree = model.trees[0]
            if tree.feature[0] < 0:
                continue
            chosen = tree.threshold[0]
            best_sse = None
            for t in np.unique(X[:, 0])[:-1]:
                left = y[X[:, 0] <= t]
                right = y[X[:, 0] > t]
                sse = np.sum((left - left.mean()) ** 2) + np.sum((right - right.mean()) ** 2)
                if best_sse is None or sse < best_sse - 1e-12:
                    best_sse = sse
            left = y[X[:, 0] <= chosen]
            right = y[X[:, 0] > chosen]
            sse = np.sum((left - left.mean()) ** 2) + np.sum((right - right.mean()) ** 2)
            assert sse == pytest.approx(best_sse, abs=1e-9)


class TestQRF:
    def test_single_leaf_median(self, rng):
        X = rng.uniform(0, 1, size=(9, 1))
        y = np.arange(9.0)
        model = fit_forest(X, y, n_trees=1, min_node_size=9, bootstrap=False)
        assert qrf_quantile(model, [[0.5]], 0.5) == pytest.approx(4.0)

    def test_quantile_monotonicity(self):
        for trial in range(100):
            rng = np.random.default_rng(8000 + trial)
            X = rng.uniform(0, 1, size=(40, 2))
            y = rng.standard_normal(40) * 5
            model = fit_forest(X, y, n_trees=10, seed=trial)
            q = qrf_quantile(model, rng.uniform(0, 1, size=(10, 2)), [0.05, 0.5, 0.95])
            assert np.all(q[:, 0] <= q[:, 1]) and np.all(q[:, 1] <= q[:, 2])

    def test_weights_sum_to_one(self, rng):
        X = rng.uniform(0, 1, size=(30, 2))
        y = rng.standard_normal(30)
        model = fit_forest(X, y, n_trees=7, seed=2)
        W = qrf_weights(model, rng.uniform(0, 1, size=(6, 2)))
        np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)

    def test_hand_computed_weighted_cdf(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(0, 1, size=(8, 1))
        y = rng.standard_normal(8)
        model = fit_forest(X, y, n_trees=3, seed=5, min_node_size=2)
        x0 = np.array([[0.4]])
        # brute-force the weight of every training row
        w = np.zeros(8)
        for tree in model.trees:
            leaf = tree.route(x0)[0]
            rows = tree.leaf_rows[leaf]
            for r in rows:
                w[r] += 1.0 / len(rows)
        w /= model.B
        order = np.argsort(y, kind="stable")
        cdf = np.cumsum(w[order])
        for alpha in (0.1, 0.5, 0.9):
            expected = y[order][np.argmax(cdf >= alpha - 1e-12)]
            assert qrf_quantile(model, x0, alpha)[0] == pytest.approx(expected)

    def test_invalid_alpha(self, rng):
        X = rng.uniform(0, 1, size=(10, 1))
        model = fit_forest(X, np.zeros(10), n_trees=1)
        with pytest.raises(ValueError):
            qrf_quantile(model, [[0.5]], 1.5)


class TestPermutationImportance:
    def test_signal_beats_noise(self):
        hits = 0
        for rep in range(20):
            rng = np.random.default_rng(9000 + rep)
            X = rng.uniform(0, 1, size=(80, 2))
            y = 5.0 * X[:, 0] + 0.3 * rng.standard_normal(80)
            model = fit_forest(X, y, n_trees=25, seed=rep)
            imp = permutation_importance(model, X, y, seed=rep)
            hits += imp[0] > imp[1]
        assert hits >= 19

    def test_identity_permutation_zero(self, rng):
        X = rng.uniform(0, 1, size=(40, 2))
        y = X[:, 0] + rng.standard_normal(40)
        model = fit_forest(X, y, n_trees=5, seed=0)
        imp = permutation_importance(model, X, y, permuter=lambda r, n: np.arange(n))
        np.testing.assert_array_equal(imp, np.zeros(2))

    def test_unused_covariate_near_zero(self, rng):
        n = 50
        X = np.column_stack([rng.uniform(0, 1, n), np.linspace(0, 1, n)])
        y = 10.0 * X[:, 1]  # only column 1 drives splits
        model = fit_forest(X, y, n_trees=10, m=2, seed=1)
        imp = permutation_importance(model, X, y, seed=1)
        assert abs(imp[0]) < abs(imp[1]) * 0.05 + 1e-10


def test_forest_from_dataset_flags_categoricals(rng):
    n = 40
    eco = rng.integers(0, 3, n).astype(float)
    x = rng.uniform(0, 1, n)
    ds = from_arrays(rng.uniform(0, 10, size=(n, 2)), rng.standard_normal(n),
                     np.column_stack([x, eco]), names=["a", "eco"], categorical={"eco"})
    model = forest_from_dataset(ds, n_trees=2)
    assert model.categorical == (1,)
