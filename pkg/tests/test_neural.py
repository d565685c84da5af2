import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bondml.artifact import FeatureSpec
from bondml.errors import NumericalError
from bondml.evaluation import weps
from bondml.linear_models import fit_glm
from bondml.neural import (
    LOG_FIELDS,
    MlpModel,
    fit_mlp_backprop,
    fit_mlp_lm,
    forward,
    gradient,
    init_mlp,
    lm_step,
    train_backprop,
    train_lm,
    weighted_sse,
)


def _oracle_forward(m, X):
    out = []
    for x in X:
        z = [(x[j] - m.x_mean[j]) / m.x_scale[j] for j in range(len(x))]
        s = m.b2
        for h in range(m.H):
            a = m.b1[h] + sum(m.W1[h, j] * z[j] for j in range(len(z)))
            s += m.W2[h] * np.tanh(a)
        out.append(s)
    return np.array(out)


def _fd_gradient(m, X, y, w, step=1e-5):
    theta = m.params
    g = np.empty_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = step
        g[k] = (weighted_sse(m.with_params(theta + e), X, y, w) - weighted_sse(m.with_params(theta - e), X, y, w)) / (2 * step)
    return g


class TestForward:
    def test_zero_weights(self, rng):
        X = rng.standard_normal((10, 3))
        m = init_mlp(X, 4, seed=0)
        m = m.with_params(np.concatenate([np.zeros(m.n_params - 1), [2.5]]))
        np.testing.assert_array_equal(forward(m, X), 2.5)

    def test_linear_regime(self, rng):
        X = rng.standard_normal((20, 2))
        m = init_mlp(X, 1, seed=0)
        m = m.with_params(np.concatenate([[0.3, -0.2], [0.0], [1.0], [0.0]]))
        Xs = m.x_mean + 1e-4 * rng.standard_normal((5, 2)) * m.x_scale
        z = m.standardize(Xs)
        np.testing.assert_allclose(forward(m, Xs), z @ [0.3, -0.2], rtol=1e-7)

    def test_matches_oracle(self, rng):
        X = rng.standard_normal((15, 4)) * 3 + 1
        m = init_mlp(X, 6, seed=2)
        np.testing.assert_allclose(forward(m, X), _oracle_forward(m, X), atol=1e-12)

    def test_dimension_mismatch(self, rng):
        m = init_mlp(rng.standard_normal((5, 3)), 2)
        with pytest.raises(ValueError):
            forward(m, np.zeros((2, 4)))

    def test_params_round_trip(self, rng):
        m = init_mlp(rng.standard_normal((5, 3)), 4, seed=1)
        np.testing.assert_array_equal(m.with_params(m.params).params, m.params)
        back = MlpModel.from_dict(m.to_dict())
        np.testing.assert_array_equal(back.params, m.params)
        with pytest.raises(ValueError):
            m.with_params(np.zeros(3))

    def test_constant_column_scale(self):
        X = np.column_stack([np.ones(6), np.arange(6.0)])
        m = init_mlp(X, 2)
        assert m.x_scale[0] == 1.0
        assert np.all(np.isfinite(forward(m, X)))


class TestGradient:
    def test_perfect_fit(self, rng):
        X = rng.standard_normal((8, 3))
        m = init_mlp(X, 3, seed=4)
        np.testing.assert_allclose(gradient(m, X, forward(m, X)), 0.0, atol=1e-12)

    def test_linear_in_weights(self, rng):
        X = rng.standard_normal((8, 3))
        y = rng.standard_normal(8)
        w = rng.uniform(0.5, 2, 8)
        m = init_mlp(X, 3, seed=4)
        np.testing.assert_allclose(gradient(m, X, y, 2 * w), 2 * gradient(m, X, y, w), rtol=1e-13)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 4), H=st.integers(1, 5))
    def test_finite_differences(self, seed, d, H):
        r = np.random.default_rng(seed)
        X = r.standard_normal((5, d))
        y = r.standard_normal(5)
        w = r.uniform(0.2, 3.0, 5)
        m = init_mlp(X, H, seed=seed % 1000)
        g = gradient(m, X, y, w)
        fd = _fd_gradient(m, X, y, w)
        scale = np.maximum(np.abs(fd), 1e-3 * np.abs(fd).max() + 1e-8)
        assert np.max(np.abs(g - fd) / scale) < 1e-4


class TestLm:
    def test_linear_target(self, rng):
        X = rng.standard_normal((300, 3))
        y = X @ [1.0, -2.0, 0.5] + 10 + 0.1 * rng.standard_normal(300)
        w = rng.uniform(0.5, 2, 300)
        m = fit_mlp_lm(X, y, w, H=4, max_epochs=100, seed=1)
        lin = fit_glm(X, y, w)
        assert weps(y, m.predict(X), w) < weps(y, lin.predict(X), w) + 1e-3

    def test_accepted_epochs_decrease(self, rng):
        X = rng.standard_normal((200, 3))
        y = np.sin(X[:, 0]) + X[:, 1] ** 2
        m = fit_mlp_lm(X, y, H=5, max_epochs=30, seed=0)
        losses = [r["loss"] for r in m.log]
        assert len(losses) > 2
        assert all(b < a for a, b in zip(losses, losses[1:]))
        assert tuple(m.log[0]) == LOG_FIELDS

    def test_large_lambda_limit(self, rng):
        A = rng.standard_normal((6, 6))
        A = A @ A.T
        g = rng.standard_normal(6)
        norms = []
        for lam in (1e2, 1e4, 1e6, 1e8):
            d = lm_step(A, g, lam)
            norms.append(np.linalg.norm(d))
            cos = -(d @ g) / (np.linalg.norm(d) * np.linalg.norm(g))
        assert all(b < a for a, b in zip(norms, norms[1:]))
        assert cos > 1 - 1e-9
        np.testing.assert_allclose(lm_step(A, g, 1e8) * 1e8, -g, rtol=1e-5)

    def test_deterministic(self, rng):
        X = rng.standard_normal((100, 2))
        y = X[:, 0] * X[:, 1]
        a = fit_mlp_lm(X, y, H=3, max_epochs=10, seed=7)
        b = fit_mlp_lm(X, y, H=3, max_epochs=10, seed=7)
        np.testing.assert_array_equal(a.params, b.params)

    def test_subsample(self, rng):
        X = rng.standard_normal((500, 2))
        y = X[:, 0]
        m = fit_mlp_lm(X, y, H=2, max_epochs=5, subsample=100, seed=0)
        assert np.all(np.isfinite(m.predict(X)))

    def test_non_finite_aborts(self, rng):
        X = rng.standard_normal((20, 2))
        y = np.full(20, np.nan)
        with pytest.raises(NumericalError):
            fit_mlp_lm(X, y, H=2, max_epochs=3)

    def test_bad_h(self, rng):
        with pytest.raises(ValueError):
            init_mlp(rng.standard_normal((5, 2)), 0)


class TestBackprop:
    def test_zero_rate(self, rng):
        X = rng.standard_normal((50, 2))
        y = rng.standard_normal(50)
        init = init_mlp(X, 3, seed=0, y=y)
        m = fit_mlp_backprop(X, y, H=3, epochs=3, learning_rate=0.0, init=init)
        np.testing.assert_array_equal(m.params, init.params)

    def test_single_sample_monotone(self, rng):
        X = rng.standard_normal((1, 3))
        y = np.array([2.0])
        m = fit_mlp_backprop(X, y, H=4, epochs=100, learning_rate=1e-3, batch_size=1, seed=3)
        losses = [r["loss"] for r in m.log]
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_close_to_lm(self, rng):
        X = rng.uniform(-1, 1, (400, 2))
        y = 2 * X[:, 0] - X[:, 1] + 0.5 * np.tanh(3 * X[:, 0])
        lm = fit_mlp_lm(X, y, H=5, max_epochs=100, seed=0)
        bp = fit_mlp_backprop(X, y, H=5, epochs=400, learning_rate=0.01, batch_size=32, seed=0)
        e_lm = weps(y, lm.predict(X), np.ones(400))
        e_bp = weps(y, bp.predict(X), np.ones(400))
        assert e_bp <= 1.1 * e_lm + 0.01

    def test_divergence(self, rng):
        X = rng.standard_normal((50, 2))
        y = 100 * rng.standard_normal(50)
        with pytest.raises(NumericalError, match="diverged"):
            fit_mlp_backprop(X, y, H=3, epochs=50, learning_rate=1e4, batch_size=50)

    def test_deterministic_order(self, rng):
        X = rng.standard_normal((60, 2))
        y = X[:, 0]
        a = fit_mlp_backprop(X, y, H=2, epochs=3, batch_size=7, seed=5)
        b = fit_mlp_backprop(X, y, H=2, epochs=3, batch_size=7, seed=5)
        np.testing.assert_array_equal(a.params, b.params)


def test_dataset_trainers_and_log(small_ds, tmp_path):
    spec = FeatureSpec(columns=("current_coupon", "trade_size", "trade_type", "curve_based_price", "trade_price_last1"))
    art = train_lm(small_ds, H=3, max_epochs=5, features=spec)
    assert art.family == "nn_lm"
    assert art.model.column_names == tuple(art.featurizer.names)
    path = tmp_path / "log.csv"
    art.model.write_log_csv(path)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == len(art.model.log) and tuple(rows[0]) == LOG_FIELDS
    bp = train_backprop(small_ds, H=3, epochs=2, features=spec)
    assert bp.family == "nn_backprop"
    # standardization comes from the training rows and is not refitted on new data
    other = small_ds.take(np.arange(100))
    p1 = art.predict(other)
    p2 = art.predict(small_ds)[:100]
    np.testing.assert_allclose(p1, p2, rtol=0, atol=1e-12)
