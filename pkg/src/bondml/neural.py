"""One-hidden-layer tanh network for price regression.

    yhat = W2 . tanh(W1 x~ + b1) + b2,   x~ = (x - mean) / scale

Training minimises the weighted squared error sum_i w_i (yhat_i - y_i)^2,
either by Levenberg-Marquardt on the residuals sqrt(w_i)(yhat_i - y_i) or by
mini-batch gradient descent. Standardisation constants are computed from
the training rows when the model is trained and cannot be refitted later.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from bondml.artifact import FeatureSpec, ModelArtifact, fit_artifact
from bondml.dataset import Dataset
from bondml.errors import NumericalError

logger = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "loss", "weps", "lam", "step_norm", "seconds")


@dataclass(frozen=True)
class MlpModel:
    W1: np.ndarray  # (H, d)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (H,)
    b2: float
    x_mean: np.ndarray
    x_scale: np.ndarray
    log: tuple = field(default=(), compare=False)
    column_names: tuple = ()
    optimizer: str = ""

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def H(self) -> int:
        return self.W1.shape[0]

    @property
    def n_params(self) -> int:
        return self.H * (self.d + 1) + self.H + 1

    @property
    def params(self) -> np.ndarray:
        """Flat parameter vector ordered W1 (row-major), b1, W2, b2."""
        return np.concatenate([self.W1.ravel(), self.b1, self.W2, [self.b2]])

    def with_params(self, theta) -> MlpModel:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        H, d = self.H, self.d
        k = H * d
        return replace(self, W1=theta[:k].reshape(H, d).copy(), b1=theta[k:k + H].copy(),
                       W2=theta[k + H:k + 2 * H].copy(), b2=float(theta[-1]))

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ValueError(f"expected {self.d} input columns, got shape {X.shape}")
        return (X - self.x_mean) / self.x_scale

    def predict(self, X) -> np.ndarray:
        return forward(self, X)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "H": self.H,
            "activation": "tanh",
            "W1": self.W1.tolist(),
            "b1": self.b1.tolist(),
            "W2": self.W2.tolist(),
            "b2": self.b2,
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "column_names": list(self.column_names),
            "optimizer": self.optimizer,
            "log": [dict(r) for r in self.log],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> MlpModel:
        return cls(np.asarray(d["W1"], dtype=float).reshape(d["H"], d["d"]), np.asarray(d["b1"], dtype=float),
                   np.asarray(d["W2"], dtype=float), float(d["b2"]), np.asarray(d["x_mean"], dtype=float),
                   np.asarray(d["x_scale"], dtype=float), tuple(d.get("log", ())), tuple(d.get("column_names", ())),
                   d.get("optimizer", ""))

    def write_log_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=LOG_FIELDS, extrasaction="ignore")
            wr.writeheader()
            for row in self.log:
                wr.writerow(row)


def init_mlp(X, H: int, seed: int = 0, y=None, w=None, column_names=()) -> MlpModel:
    """Uniform(+-1/sqrt(fan_in)) weights; standardisation from ``X``.

    When ``y`` is given the output bias starts at its (weighted) mean, which
    saves the optimiser from first having to climb to the price level.
    """
    if H < 1:
        raise ValueError("H must be at least 1")
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale <= 1e-12 * np.maximum(1.0, np.abs(mean))] = 1.0
    rng = np.random.default_rng(seed)
    a1 = 1.0 / math.sqrt(d)
    a2 = 1.0 / math.sqrt(H)
    W1 = rng.uniform(-a1, a1, size=(H, d))
    b1 = rng.uniform(-a1, a1, size=H)
    W2 = rng.uniform(-a2, a2, size=H)
    b2 = float(rng.uniform(-a2, a2))
    if y is not None:
        y = np.asarray(y, dtype=float)
        b2 += float(np.average(y, weights=w))
    return MlpModel(W1, b1, W2, b2, mean, scale, (), tuple(column_names))


def forward(m: MlpModel, X) -> np.ndarray:
    Z = m.standardize(X)
    return np.tanh(Z @ m.W1.T + m.b1) @ m.W2 + m.b2


def _check_xyw(m: MlpModel, X, y, w):
    Z = m.standardize(X)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    if y.shape != (Z.shape[0],) or w.shape != y.shape:
        raise ValueError("X, y and w have inconsistent lengths")
    return Z, y, w


def weighted_sse(m: MlpModel, X, y, w=None) -> float:
    Z, y, w = _check_xyw(m, X, y, w)
    r = np.tanh(Z @ m.W1.T + m.b1) @ m.W2 + m.b2 - y
    return float(np.sum(w * r * r))


def gradient(m: MlpModel, X, y, w=None) -> np.ndarray:
    """Gradient of sum_i w_i (yhat_i - y_i)^2 by reverse accumulation, in ``params`` order."""
    Z, y, w = _check_xyw(m, X, y, w)
    h = np.tanh(Z @ m.W1.T + m.b1)
    delta = 2.0 * w * (h @ m.W2 + m.b2 - y)  # d loss / d yhat
    g_W2 = h.T @ delta
    g_b2 = delta.sum()
    delta_h = np.outer(delta, m.W2) * (1.0 - h * h)  # back through tanh
    g_W1 = delta_h.T @ Z
    g_b1 = delta_h.sum(axis=0)
    return np.concatenate([g_W1.ravel(), g_b1, g_W2, [g_b2]])


def _jacobian_block(m: MlpModel, Z: np.ndarray, sw: np.ndarray):
    """Rows sqrt(w_i) * d yhat_i / d params for a block of standardized inputs, and yhat."""
    h = np.tanh(Z @ m.W1.T + m.b1)
    yhat = h @ m.W2 + m.b2
    G = m.W2 * (1.0 - h * h)  # d yhat / d b1
    B = Z.shape[0]
    J = np.empty((B, m.n_params))
    k = m.H * m.d
    J[:, :k] = (G[:, :, None] * Z[:, None, :]).reshape(B, k)
    J[:, k:k + m.H] = G
    J[:, k + m.H:k + 2 * m.H] = h
    J[:, -1] = 1.0
    J *= sw[:, None]
    return J, yhat


def _normal_equations(m: MlpModel, Z, y, w, block_rows: int):
    """Accumulate J^T J, J^T r and the loss over fixed row blocks (fixed summation order)."""
    P = m.n_params
    A = np.zeros((P, P))
    g = np.zeros(P)
    loss = 0.0
    yhat = np.empty(len(y))
    sw = np.sqrt(w)
    for s in range(0, len(y), block_rows):
        sl = slice(s, s + block_rows)
        J, yh = _jacobian_block(m, Z[sl], sw[sl])
        r = sw[sl] * (yh - y[sl])
        A += J.T @ J
        g += J.T @ r
        loss += float(r @ r)
        yhat[sl] = yh
    return A, g, loss, yhat


def _loss(m: MlpModel, Z, y, w) -> tuple[float, np.ndarray]:
    yhat = np.tanh(Z @ m.W1.T + m.b1) @ m.W2 + m.b2
    r = yhat - y
    return float(np.sum(w * r * r)), yhat


def _weps(y, yhat, w) -> float:
    return float(np.sum(w * np.abs(y - yhat)) / np.sum(w))


def lm_step(A: np.ndarray, g: np.ndarray, lam: float) -> np.ndarray:
    """Solve (A + lam*I) delta = -g by Cholesky."""
    M = A + lam * np.eye(len(g))
    c = scipy.linalg.cho_factor(M, lower=True, check_finite=False)
    return -scipy.linalg.cho_solve(c, g, check_finite=False)


def fit_mlp_lm(
    X,
    y,
    w=None,
    H: int = 20,
    max_epochs: int = 200,
    lam0: float = 1e-3,
    lam_up: float = 10.0,
    lam_down: float = 10.0,
    tol: float = 1e-8,
    seed: int = 0,
    lam_max: float = 1e16,
    block_rows: int = 2048,
    subsample: int | None = None,
    column_names=(),
    init: MlpModel | None = None,
) -> MlpModel:
    """Levenberg-Marquardt on the weighted residuals.

    Each epoch forms J^T J and J^T r once, then tries steps with growing
    damping until one lowers the loss (accept, damping / ``lam_down``) or the
    damping passes ``lam_max`` (stop). Training also stops when the gradient
    or the accepted step falls below ``tol`` relative to loss/parameter size.
    ``subsample`` fits on a seeded row subset, for very large training sets.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    if subsample is not None and subsample < len(y):
        idx = np.sort(np.random.default_rng(seed).choice(len(y), size=subsample, replace=False))
        X, y, w = X[idx], y[idx], w[idx]
    m = init or init_mlp(X, H, seed, y, w, column_names)
    m = replace(m, optimizer="lm")
    Z = m.standardize(X)
    lam = lam0
    log = []
    t0 = time.perf_counter()
    A, g, loss, yhat = _normal_equations(m, Z, y, w, block_rows)
    log.append(dict(epoch=0, loss=loss, weps=_weps(y, yhat, w), lam=lam, step_norm=0.0,
                    seconds=time.perf_counter() - t0))
    for epoch in range(1, max_epochs + 1):
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite training loss at epoch {epoch}; log: {log[-3:]}")
        theta = m.params
        if np.max(np.abs(g)) <= tol * max(1.0, loss):
            break
        accepted = None
        while lam <= lam_max:
            try:
                delta = lm_step(A, g, lam)
            except np.linalg.LinAlgError:
                lam *= lam_up
                continue
            cand = m.with_params(theta + delta)
            c_loss, _ = _loss(cand, Z, y, w)
            if c_loss < loss:
                accepted = (cand, delta)
                lam = max(lam / lam_down, 1e-300)
                break
            lam *= lam_up
        if accepted is None:
            logger.info("LM stopped at epoch %d: damping exceeded %g", epoch, lam_max)
            break
        m, delta = accepted
        A, g, loss, yhat = _normal_equations(m, Z, y, w, block_rows)
        step_norm = float(np.linalg.norm(delta))
        log.append(dict(epoch=epoch, loss=loss, weps=_weps(y, yhat, w), lam=lam, step_norm=step_norm,
                        seconds=time.perf_counter() - t0))
        if step_norm <= tol * (np.linalg.norm(theta) + tol):
            break
    return replace(m, log=tuple(log))


def fit_mlp_backprop(
    X,
    y,
    w=None,
    H: int = 20,
    epochs: int = 100,
    learning_rate: float = 0.01,
    batch_size: int = 256,
    seed: int = 0,
    column_names=(),
    init: MlpModel | None = None,
) -> MlpModel:
    """Mini-batch gradient descent. Each step moves by ``learning_rate`` times
    the batch gradient divided by the batch weight, so the rate does not
    depend on the weight scale. Batch order comes from ``seed``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    if learning_rate < 0:
        raise ValueError("learning_rate must be non-negative")
    m = init or init_mlp(X, H, seed, y, w, column_names)
    m = replace(m, optimizer="backprop")
    Z = m.standardize(X)
    rng = np.random.default_rng([seed, 1])
    theta = m.params
    log = []
    t0 = time.perf_counter()
    loss, yhat = _loss(m, Z, y, w)
    loss0 = loss
    log.append(dict(epoch=0, loss=loss, weps=_weps(y, yhat, w), lam=float("nan"), step_norm=0.0, seconds=0.0))
    n = len(y)
    for epoch in range(1, epochs + 1):
        start = theta.copy()
        perm = rng.permutation(n)
        for s in range(0, n, batch_size):
            b = perm[s:s + batch_size]
            gb = _gradient_std(m, Z[b], y[b], w[b])
            theta = theta - learning_rate * gb / w[b].sum()
            m = m.with_params(theta)
        loss, yhat = _loss(m, Z, y, w)
        log.append(dict(epoch=epoch, loss=loss, weps=_weps(y, yhat, w), lam=float("nan"),
                        step_norm=float(np.linalg.norm(theta - start)), seconds=time.perf_counter() - t0))
        if not math.isfinite(loss) or loss > 1e12 * max(loss0, 1e-300):
            raise NumericalError(f"backpropagation diverged at epoch {epoch}; log: {log[-3:]}")
    return replace(m, log=tuple(log))


def _gradient_std(m: MlpModel, Z, y, w) -> np.ndarray:
    # gradient() on already-standardized inputs
    h = np.tanh(Z @ m.W1.T + m.b1)
    delta = 2.0 * w * (h @ m.W2 + m.b2 - y)
    delta_h = np.outer(delta, m.W2) * (1.0 - h * h)
    return np.concatenate([(delta_h.T @ Z).ravel(), delta_h.sum(axis=0), h.T @ delta, [delta.sum()]])


def train_lm(ds_train: Dataset, H: int = 20, max_epochs: int = 200, lam0: float = 1e-3, lam_up: float = 10.0,
             lam_down: float = 10.0, tol: float = 1e-8, seed: int = 0, subsample: int | None = None,
             features: FeatureSpec | None = None) -> ModelArtifact:
    params = dict(H=H, max_epochs=max_epochs, lam0=lam0, lam_up=lam_up, lam_down=lam_down, tol=tol, seed=seed,
                  subsample=subsample)
    return fit_artifact(
        "nn_lm", params, ds_train, features or FeatureSpec(),
        lambda X, y, w, feat: fit_mlp_lm(X, y, w, H, max_epochs, lam0, lam_up, lam_down, tol, seed,
                                         subsample=subsample, column_names=feat.names),
    )


def train_backprop(ds_train: Dataset, H: int = 20, epochs: int = 100, learning_rate: float = 0.01,
                   batch_size: int = 256, seed: int = 0, features: FeatureSpec | None = None) -> ModelArtifact:
    params = dict(H=H, epochs=epochs, learning_rate=learning_rate, batch_size=batch_size, seed=seed)
    return fit_artifact(
        "nn_backprop", params, ds_train, features or FeatureSpec(),
        lambda X, y, w, feat: fit_mlp_backprop(X, y, w, H, epochs, learning_rate, batch_size, seed,
                                               column_names=feat.names),
    )
