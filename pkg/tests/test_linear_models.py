import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bondml.artifact import FeatureSpec
from bondml.dataset import generate_synthetic
from bondml.errors import NumericalError
from bondml.evaluation import weps
from bondml.linear_models import (
    GlmModel,
    RankDeficientError,
    apply_pca,
    fit_glm,
    fit_glm_artifact,
    fit_pca,
    fit_pcr,
    fit_pcr_arrays,
    predict_glm,
    rank_components,
    rank_components_by_target_power,
)


def _normal_equations(X, y, w):
    D = np.column_stack([np.ones(len(X)), X])
    return np.linalg.solve(D.T @ (w[:, None] * D), D.T @ (w * y))


class TestFitGlm:
    def test_exact_fit(self):
        m = fit_glm([[1.0], [2.0]], [2.0, 4.0])
        assert m.intercept == pytest.approx(0.0, abs=1e-10)
        assert m.coefficients[1] == pytest.approx(2.0, abs=1e-10)
        np.testing.assert_allclose(predict_glm(m, [[1.0], [2.0]]), [2.0, 4.0], atol=1e-10)

    def test_uniform_weights_equal_ols(self, rng):
        X = rng.standard_normal((80, 4))
        y = X @ [1.0, -2.0, 0.5, 3.0] + rng.standard_normal(80)
        a = fit_glm(X, y)
        b = fit_glm(X, y, np.full(80, 3.7))
        np.testing.assert_allclose(a.coefficients, b.coefficients, rtol=1e-12, atol=1e-12)

    def test_gamma_constant_target(self):
        X = np.zeros((6, 0))
        m = fit_glm(X, np.full(6, 4.0), link="inverse")
        assert m.intercept == pytest.approx(0.25, rel=1e-12)
        assert m.converged

    def test_gamma_matches_score_equations(self, rng):
        X = rng.uniform(0, 1, (300, 2))
        mu = 1.0 / (0.5 + X @ [0.3, 0.2])
        y = rng.gamma(5.0, mu / 5.0)
        w = rng.uniform(0.5, 2.0, 300)
        m = fit_glm(X, y, w, link="inverse")
        # canonical-link score: D^T W (y - mu) = 0
        D = np.column_stack([np.ones(300), X])
        score = D.T @ (w * (y - m.predict(X)))
        assert np.max(np.abs(score)) < 1e-6 * np.sum(w * y)
        log = fit_glm(X, y, w, link="log")
        assert log.converged

    def test_rank_deficient_names_column(self, rng):
        X = rng.standard_normal((30, 3))
        X = np.column_stack([X, X[:, 0] + X[:, 1]])
        with pytest.raises(RankDeficientError) as exc:
            fit_glm(X, rng.standard_normal(30), column_names=["a", "b", "c", "ab"])
        assert len(exc.value.columns) == 1
        assert isinstance(exc.value, NumericalError)

    def test_errors(self, rng):
        X = rng.standard_normal((10, 2))
        with pytest.raises(ValueError):
            fit_glm(X, np.arange(10.0) - 5, link="inverse")
        with pytest.raises(ValueError):
            fit_glm(X, np.ones(9))
        with pytest.raises(ValueError):
            fit_glm(X[:2], np.ones(2))
        with pytest.raises(ValueError):
            fit_glm(X, np.ones(10), link="probit")
        m = fit_glm(X, rng.standard_normal(10))
        with pytest.raises(ValueError):
            m.predict(X[:, :1])

    def test_zero_coefficients_predict_zero(self):
        m = GlmModel("identity", np.zeros(4), False, ["a", "b", "c"])
        np.testing.assert_array_equal(m.predict(np.ones((5, 3))), 0.0)

    def test_predict_matches_matrix_oracle(self, rng):
        X = rng.standard_normal((50, 5))
        m = fit_glm(X, rng.standard_normal(50))
        oracle = np.column_stack([np.ones(50), X]) @ m.coefficients
        np.testing.assert_allclose(m.predict(X), oracle, atol=1e-10)

    def test_residual_orthogonality(self, rng):
        X = rng.standard_normal((200, 6)) * [1, 10, 100, 0.1, 1, 5]
        y = rng.standard_normal(200) * 50
        w = rng.uniform(0.1, 10, 200)
        D = np.column_stack([np.ones(200), X])
        for ww in (np.ones(200), w):
            m = fit_glm(X, y, ww)
            r = y - m.predict(X)
            assert np.max(np.abs(D.T @ (ww * r))) < 1e-8 * np.linalg.norm(y) * ww.sum()

    def test_wls_objective_not_above_ols(self, rng):
        X = rng.standard_normal((100, 3))
        y = rng.standard_normal(100)
        w = rng.uniform(0.1, 5, 100)
        obj = lambda m: np.sum(w * (y - m.predict(X)) ** 2)
        assert obj(fit_glm(X, y, w)) <= obj(fit_glm(X, y)) + 1e-12

    def test_round_trip(self, rng):
        X = rng.standard_normal((20, 2))
        m = fit_glm(X, rng.standard_normal(20))
        back = GlmModel.from_dict(m.to_dict())
        np.testing.assert_array_equal(back.predict(X), m.predict(X))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(8, 60), p=st.integers(1, 5))
def test_glm_matches_normal_equations(seed, n, p):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, p))
    y = r.standard_normal(n) * 10 + 100
    w = r.uniform(0.1, 3.0, n)
    beta = fit_glm(X, y, w).coefficients
    oracle = _normal_equations(X, y, w)
    np.testing.assert_allclose(beta, oracle, rtol=1e-8, atol=1e-8 * np.abs(oracle).max())


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(-50, 50).filter(lambda c: abs(c) > 1e-3))
def test_identity_link_affine_equivariant(seed, c):
    r = np.random.default_rng(seed)
    X = r.standard_normal((30, 3))
    y = r.standard_normal(30)
    a = fit_glm(X, y).predict(X)
    b = fit_glm(X, c * y).predict(X)
    np.testing.assert_allclose(b, c * a, rtol=1e-9, atol=1e-9 * abs(c))


class TestPca:
    def test_axis_aligned(self, rng):
        X = np.zeros((40, 3))
        X[:, 0] = rng.standard_normal(40)
        t = fit_pca(X, standardize=False)
        assert t.k == 1
        np.testing.assert_allclose(np.abs(t.loadings[:, 0]), [1, 0, 0], atol=1e-12)

    def test_duplicate_column(self, rng):
        X = rng.standard_normal((50, 3))
        X = np.column_stack([X, X[:, 1]])
        t = fit_pca(X)
        assert t.k == 3
        assert t.eigenvalues[-1] < 1e-10 * t.eigenvalues[0]

    def test_reconstruction(self, rng):
        X = rng.standard_normal((200, 10))
        t = fit_pca(X)
        S = apply_pca(t, X, 10)
        back = (S @ t.loadings[:, :10].T) * t.scales + t.means
        np.testing.assert_allclose(back, X, atol=1e-8)

    def test_scores_covariance(self, rng):
        X = rng.standard_normal((300, 5)) @ rng.standard_normal((5, 5))
        t = fit_pca(X)
        S = t.apply(X)
        np.testing.assert_allclose(np.cov(S, rowvar=False), np.diag(t.eigenvalues), atol=1e-8)
        np.testing.assert_allclose(t.loadings.T @ t.loadings, np.eye(5), atol=1e-12)
        assert t.eigenvalues.sum() == pytest.approx(5.0, abs=1e-8)

    def test_mean_row_scores_zero(self, rng):
        X = rng.standard_normal((30, 4))
        t = fit_pca(X)
        np.testing.assert_allclose(t.apply(X.mean(axis=0, keepdims=True)), 0.0, atol=1e-12)

    def test_projection_oracle(self, rng):
        X = rng.standard_normal((30, 4)) * 3 + 1
        t = fit_pca(X)
        oracle = ((X - X.mean(0)) / X.std(0, ddof=1)) @ t.loadings[:, :2]
        np.testing.assert_allclose(t.apply(X, 2), oracle, atol=1e-12)

    def test_sign_convention(self, rng):
        t = fit_pca(rng.standard_normal((50, 4)))
        for j in range(4):
            v = t.loadings[:, j]
            assert v[np.flatnonzero(np.abs(v) > 1e-12)[0]] > 0

    def test_errors(self, rng):
        X = rng.standard_normal((10, 3))
        X[:, 1] = 2.0
        with pytest.raises(ValueError, match="x1"):
            fit_pca(X)
        t = fit_pca(rng.standard_normal((10, 3)))
        with pytest.raises(ValueError):
            t.apply(X, 4)
        with pytest.raises(ValueError):
            t.apply(X, 0)
        with pytest.raises(ValueError):
            fit_pca(X[:1])


class TestPcr:
    def test_full_rank_equals_ols(self, rng):
        X = rng.standard_normal((120, 5)) @ rng.standard_normal((5, 5))
        y = X @ rng.standard_normal(5) + rng.standard_normal(120)
        pcr = fit_pcr_arrays(X, y)
        ols = fit_glm(X, y)
        np.testing.assert_allclose(pcr.predict(X), ols.predict(X), atol=1e-8)
        np.testing.assert_allclose(pcr.original_coefficients(), ols.coefficients, atol=1e-8)

    def test_rank_one_signal(self, rng):
        z = rng.standard_normal(400)
        X = np.column_stack([z, 2 * z, -z]) + 1e-9 * rng.standard_normal((400, 3))
        y = 3 * z + 1
        w = np.ones(400)
        one = fit_pcr_arrays(X[:300], y[:300], k=1)
        full = fit_glm(X[:300], y[:300])
        e1 = weps(y[300:], one.predict(X[300:]), w[300:])
        e2 = weps(y[300:], full.predict(X[300:]), w[300:])
        assert abs(e1 - e2) < 1e-6

    def test_k_zero(self, small_ds):
        with pytest.raises(ValueError):
            fit_pcr(small_ds, k=0)

    def test_artifact(self, small_ds):
        art = fit_pcr(small_ds, k=5)
        assert art.family == "pcr"
        assert art.model.k == 5
        assert art.predict(small_ds).shape == (len(small_ds),)
        json_text = art.to_json()
        assert '"components"' in json_text


class TestRankComponents:
    def _low_eigen_data(self, rng, n=2000):
        # five strongly correlated columns plus one small independent direction
        base = rng.standard_normal((n, 1))
        X = base + 0.3 * rng.standard_normal((n, 5))
        # target is the weakest direction, the residual of column 0 off the rest
        t = fit_pca(X)
        low = t.apply(X)[:, -1]
        y = 100 + 5 * low + 0.05 * rng.standard_normal(n)
        return X, y, t

    def test_lowest_eigen_component_first(self, rng):
        X, y, t = self._low_eigen_data(rng)
        ranked = rank_components(X, y, np.ones(len(y)))
        assert ranked[0][0] == t.k - 1
        assert [e for _, e in ranked] == sorted(e for _, e in ranked)

    def test_independent_target(self, rng):
        X = rng.standard_normal((3000, 4))
        y = rng.standard_normal(3000)
        w = np.ones(3000)
        base = weps(y, np.full(3000, y.mean()), w)
        for _, e in rank_components(X, y, w):
            assert abs(e - base) < 0.01 * base

    def test_singleton(self, rng):
        X = rng.standard_normal((50, 1))
        assert [j for j, _ in rank_components(X, rng.standard_normal(50))] == [0]

    def test_target_power_selection(self, rng):
        X, y, t = self._low_eigen_data(rng)
        m = fit_pcr_arrays(X, y, k=1, select="target_power")
        assert m.components == [t.k - 1]

    def test_dataset_level(self, small_ds):
        ranked = rank_components_by_target_power(small_ds, features=FeatureSpec(columns=("current_coupon", "trade_size", "curve_based_price")))
        assert sorted(j for j, _ in ranked) == [0, 1, 2]


def test_glm_artifact_weighted_vs_unweighted(small_ds):
    wls = fit_glm_artifact(small_ds, weighted=True)
    ols = fit_glm_artifact(small_ds, weighted=False)
    w = small_ds.weights
    y = small_ds.target
    assert np.sum(w * (y - wls.predict(small_ds)) ** 2) <= np.sum(w * (y - ols.predict(small_ds)) ** 2)
    assert not np.allclose(wls.model.coefficients, ols.model.coefficients)
