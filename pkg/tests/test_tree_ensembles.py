import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bondml.artifact import FeatureSpec
from bondml.dataset import generate_synthetic
from bondml.errors import NumericalError
from bondml.evaluation import weps
from bondml.tree_ensembles import (
    BoostModel,
    ForestModel,
    RegressionTree,
    TreeControls,
    fit_forest,
    fit_ls_boost,
    fit_tree,
    grow_forest,
    grow_ls_boost,
    grow_tree,
    predict_tree,
    prune_tree,
    rank_features_rf,
    rf_feature_ranking,
)


def _walk(t: RegressionTree, x) -> int:
    node = 0
    while t.feature[node] >= 0:
        v = x[t.feature[node]]
        if t.categorical[t.feature[node]]:
            left = bool((int(t.cat_mask[node]) >> int(v)) & 1)
        else:
            left = v < t.threshold[node]
        node = t.left[node] if left else t.right[node]
    return node


def _best_stump(x, y, w):
    """Exhaustive weighted-SSE split search over midpoints."""
    xs = np.unique(x)
    best = (np.inf, None)
    for a, b in zip(xs[:-1], xs[1:]):
        thr = 0.5 * (a + b)
        sse = 0.0
        for side in (x < thr, x >= thr):
            m = np.average(y[side], weights=w[side])
            sse += np.sum(w[side] * (y[side] - m) ** 2)
        if sse < best[0] - 1e-12:
            best = (sse, thr)
    return best


class TestTree:
    def test_step(self):
        x = np.array([-3.0, -2.0, -0.5, 0.0, 1.0, 4.0])
        y = (x >= 0).astype(float)
        t = grow_tree(x[:, None], y, controls=TreeControls(max_depth=1))
        assert t.n_leaves == 2
        assert t.threshold[0] == pytest.approx(-0.25)
        np.testing.assert_array_equal(t.predict(x[:, None]), y)

    def test_split_matches_exhaustive_oracle(self, rng):
        x = rng.standard_normal(60).round(2)
        y = np.sin(3 * x) + 0.1 * rng.standard_normal(60)
        w = rng.uniform(0.2, 3.0, 60)
        t = grow_tree(x[:, None], y, w, TreeControls(max_depth=1))
        _, thr = _best_stump(x, y, w)
        assert t.threshold[0] == pytest.approx(thr, abs=1e-12)

    def test_constant_y(self, rng):
        X = rng.standard_normal((40, 3))
        t = grow_tree(X, np.full(40, 7.5))
        assert t.n_leaves == 1
        np.testing.assert_array_equal(t.predict(X), 7.5)

    def test_min_samples_exceeds_n(self, rng):
        X = rng.standard_normal((30, 2))
        y = rng.standard_normal(30)
        w = rng.uniform(1, 2, 30)
        t = grow_tree(X, y, w, TreeControls(min_samples_split=31))
        assert t.n_leaves == 1
        assert t.value[0] == pytest.approx(np.average(y, weights=w), rel=1e-12)

    def test_exact_fit_and_tie_rule(self, rng):
        X = rng.standard_normal((50, 2))
        y = rng.standard_normal(50)
        t = grow_tree(X, y)
        np.testing.assert_allclose(predict_tree(t, X), y, atol=1e-12)
        thr = t.threshold[0]
        f = t.feature[0]
        row = X[:1].copy()
        row[0, f] = thr
        assert _walk(t, row[0]) == t.apply(row)[0]
        # at the threshold a row goes right
        assert t.apply(row)[0] in _subtree(t, t.right[0])

    def test_categorical_subset_split(self, rng):
        code = rng.choice([2, 3, 4], 300)
        y = np.where(code == 3, 5.0, 0.0) + 0.01 * rng.standard_normal(300)
        t = grow_tree(code[:, None].astype(float), y, controls=TreeControls(max_depth=1), categorical=[True])
        assert t.is_cat_node[0]
        left_levels = {lv for lv in (2, 3, 4) if (int(t.cat_mask[0]) >> lv) & 1}
        assert left_levels in ({3}, {2, 4})

    def test_leaf_values_within_range(self, rng):
        X = rng.standard_normal((200, 3))
        y = rng.standard_normal(200)
        t = grow_tree(X, y, rng.uniform(0.1, 1, 200), TreeControls(min_samples_leaf=10))
        leaves = t.apply(X)
        for leaf in np.unique(leaves):
            vals = y[leaves == leaf]
            assert vals.min() - 1e-12 <= t.value[leaf] <= vals.max() + 1e-12
        assert t.n_samples[0] == 200
        assert np.all(t.n_samples[t.feature < 0] >= 10)

    def test_max_leaves_and_depth(self, rng):
        X = rng.standard_normal((300, 4))
        y = rng.standard_normal(300)
        assert grow_tree(X, y, controls=TreeControls(max_leaves=6)).n_leaves == 6
        assert grow_tree(X, y, controls=TreeControls(max_depth=3)).max_depth <= 3

    def test_feature_mismatch(self, rng):
        t = grow_tree(rng.standard_normal((10, 2)), rng.standard_normal(10))
        with pytest.raises(ValueError):
            t.predict(np.zeros((3, 3)))

    def test_bad_categorical(self, rng):
        with pytest.raises(ValueError):
            grow_tree(np.array([[0.5], [1.0]]), [1.0, 2.0], categorical=[True])

    def test_pruning(self, rng):
        X = rng.standard_normal((200, 3))
        y = X[:, 0] + rng.standard_normal(200)
        full = grow_tree(X, y)
        small = prune_tree(full, 5.0)
        assert small.n_leaves < full.n_leaves
        assert prune_tree(full, 1e12).n_leaves == 1
        assert prune_tree(full, 0.0).n_leaves == full.n_leaves

    def test_round_trip(self, rng):
        X = rng.standard_normal((40, 2))
        t = grow_tree(X, rng.standard_normal(40), controls=TreeControls(max_depth=3))
        np.testing.assert_array_equal(RegressionTree.from_dict(t.to_dict()).predict(X), t.predict(X))


def _subtree(t, node):
    out, stack = set(), [node]
    while stack:
        i = stack.pop()
        out.add(i)
        if t.feature[i] >= 0:
            stack += [t.left[i], t.right[i]]
    return out


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), depth=st.integers(1, 8))
def test_apply_matches_naive_traversal(seed, depth):
    r = np.random.default_rng(seed)
    X = r.standard_normal((120, 3)).round(1)
    X[:, 2] = r.choice([2, 3, 4], 120)
    y = r.standard_normal(120)
    t = grow_tree(X, y, r.uniform(0.1, 2, 120), TreeControls(max_depth=depth), categorical=[False, False, True])
    Q = r.standard_normal((50, 3)).round(1)
    Q[:, 2] = r.choice([2, 3, 4], 50)
    np.testing.assert_array_equal(t.apply(Q), [_walk(t, q) for q in Q])
    # every training row reaches a leaf, and the fit is no worse than the root
    leaves = t.apply(X)
    assert np.all(t.feature[leaves] < 0)
    assert t.impurity[np.unique(leaves)].sum() <= t.impurity[0] + 1e-9
    u = grow_tree(X, y, controls=TreeControls(max_depth=depth), categorical=[False, False, True])
    assert np.sum((y - u.predict(X)) ** 2) <= np.sum((y - y.mean()) ** 2) + 1e-9


class TestForest:
    def test_single_tree_equals_fit_tree(self, rng):
        X = rng.standard_normal((100, 4))
        y = rng.standard_normal(100)
        f = grow_forest(X, y, n_trees=1, m_try=None, bootstrap=False)
        t = grow_tree(X, y)
        np.testing.assert_array_equal(f.predict(X), t.predict(X))

    def test_mean_of_trees_and_determinism(self, rng):
        X = rng.standard_normal((150, 5))
        y = X[:, 0] ** 2 + rng.standard_normal(150)
        a = grow_forest(X, y, n_trees=7, m_try=2, seed=3)
        b = grow_forest(X, y, n_trees=7, m_try=2, seed=3)
        np.testing.assert_array_equal(a.predict(X), b.predict(X))
        np.testing.assert_allclose(a.predict(X), np.mean([t.predict(X) for t in a.trees], axis=0), rtol=0, atol=1e-14)
        assert a.seeds == [3, 4, 5, 6, 7, 8, 9]
        assert len(a.oob_weps) == 7 and np.isfinite(a.oob_error)
        back = ForestModel.from_dict(a.to_dict())
        np.testing.assert_array_equal(back.predict(X), a.predict(X))

    def test_forest_beats_tree_on_nonlinear_target(self, rng):
        X = rng.uniform(-2, 2, (3000, 5))
        y = np.sin(2 * X[:, 0]) + X[:, 1] * X[:, 2] + 0.5 * rng.standard_normal(3000)
        w = np.ones(1000)
        tree = grow_tree(X[:2000], y[:2000])
        forest = grow_forest(X[:2000], y[:2000], n_trees=100, m_try=2, seed=0)
        assert weps(y[2000:], forest.predict(X[2000:]), w) < weps(y[2000:], tree.predict(X[2000:]), w)

    def test_errors(self, rng):
        X = rng.standard_normal((20, 3))
        with pytest.raises(ValueError):
            grow_forest(X, np.ones(20), n_trees=0)
        with pytest.raises(ValueError):
            grow_forest(X, np.ones(20), m_try=4)


class TestBoost:
    def test_trace_starts_at_mean(self, rng):
        X = rng.standard_normal((80, 2))
        y = rng.standard_normal(80) + 3
        w = rng.uniform(0.5, 2, 80)
        m = grow_ls_boost(X, y, w, n_stages=5)
        assert m.f0 == pytest.approx(np.average(y, weights=w))
        np.testing.assert_allclose(m.staged_predict(X, 0), m.f0)
        assert m.train_loss[0] == pytest.approx(np.average((y - m.f0) ** 2, weights=w))
        assert len(m.train_loss) == 6

    def test_one_stage_isolates_points(self, rng):
        x = rng.permutation(20).astype(float)[:, None]
        y = rng.standard_normal(20)
        m = grow_ls_boost(x, y, n_stages=1, J=20, shrinkage=1.0)
        np.testing.assert_allclose(m.predict(x), y, atol=1e-12)

    def test_monotone_trace(self, small_ds):
        art = fit_ls_boost(small_ds, n_stages=200, J=6, shrinkage=0.1)
        loss = np.array(art.model.train_loss)
        assert np.all(np.diff(loss) <= 1e-12 * loss[0])
        assert all(t.n_leaves <= 6 for t in art.model.trees)

    def test_round_trip(self, rng):
        X = rng.standard_normal((60, 2))
        m = grow_ls_boost(X, rng.standard_normal(60), n_stages=10)
        np.testing.assert_array_equal(BoostModel.from_dict(m.to_dict()).predict(X), m.predict(X))

    def test_preconditions(self, rng):
        X = rng.standard_normal((20, 2))
        y = np.ones(20)
        for kw in ({"n_stages": 0}, {"J": 1}, {"shrinkage": 0.0}, {"shrinkage": 1.5}):
            with pytest.raises(ValueError):
                grow_ls_boost(X, y, **kw)


class TestFeatureRanking:
    def test_signal_survives(self, rng):
        X = rng.standard_normal((400, 2))
        y = X[:, 0].copy()
        r = rank_features_rf(X, y, names=["signal", "noise"], target_count=1, n_trees=30,
                             appearance_threshold=0.0, seed=1)
        assert [f for f, _ in r.ranking] == ["signal"]

    def test_one_round_one_drop(self, rng):
        X = rng.standard_normal((300, 6))
        y = X @ np.arange(1.0, 7.0) + rng.standard_normal(300)
        r = rank_features_rf(X, y, target_count=5, n_trees=30, appearance_threshold=0.0)
        assert len(r.rounds) == 1
        assert len(r.rounds[0]["dropped"]) == 1
        assert r.rounds[0]["dropped"] == ["x0"]

    def test_zero_threshold_scores_everything(self, rng):
        X = rng.standard_normal((300, 5))
        y = X[:, 0] + rng.standard_normal(300)
        r = rank_features_rf(X, y, target_count=2, n_trees=30, appearance_threshold=0.0)
        for rd in r.rounds:
            assert len(rd["scored"]) == rd["n_features"]

    def test_stall_aborts(self, rng):
        X = rng.standard_normal((100, 4))
        y = rng.standard_normal(100)
        with pytest.raises(NumericalError, match="stalled"):
            rank_features_rf(X, y, target_count=1, n_trees=10, appearance_threshold=1.01)

    def test_bad_target_count(self, rng):
        with pytest.raises(ValueError):
            rank_features_rf(rng.standard_normal((20, 3)), np.ones(20), target_count=3)

    def test_dataset_level(self, small_ds):
        cols = ("current_coupon", "trade_size", "trade_type", "curve_based_price", "trade_price_last1")
        r = rf_feature_ranking(small_ds, target_count=2, n_trees=20, features=FeatureSpec("ordinal", cols))
        assert len(r.ranking) == 2
        assert "trade_price_last1" in [f for f, _ in r.ranking]


def test_dataset_trainers(small_ds):
    tree = fit_tree(small_ds, TreeControls(max_depth=4))
    assert tree.family == "tree" and tree.model.max_depth <= 4
    assert tree.featurizer.categorical.sum() == 11  # ordinal trade-type columns
    forest = fit_forest(small_ds, n_trees=3, m_try=10, seed=2)
    again = fit_forest(small_ds, n_trees=3, m_try=10, seed=2)
    np.testing.assert_array_equal(forest.predict(small_ds), again.predict(small_ds))
