"""Generalized linear models, PCA, and principal-component regression.

Least-squares problems are solved by pivoted QR on the weighted, column-
equilibrated design rather than by forming normal equations. The gamma
family is fitted by iteratively reweighted least squares under either the
canonical inverse link or the log link.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

from bondml.artifact import FeatureSpec, ModelArtifact, fit_artifact
from bondml.dataset import Dataset
from bondml.errors import NumericalError
from bondml.evaluation import weps

LINKS = ("identity", "inverse", "log")
RANK_TOL = 1e-10


class RankDeficientError(NumericalError):
    def __init__(self, columns: Sequence[str]):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; dependent columns: {', '.join(self.columns)}")


def _wls_solve(D: np.ndarray, y: np.ndarray, w: np.ndarray, names: Sequence[str], rank_tol: float = RANK_TOL) -> np.ndarray:
    sw = np.sqrt(w)
    A = D * sw[:, None]
    scale = np.sqrt((A * A).sum(axis=0))
    zero = scale == 0
    if zero.any():
        raise RankDeficientError([names[j] for j in np.flatnonzero(zero)])
    A = A / scale
    Q, R, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rank_tol * diag[0]))
    if rank < D.shape[1]:
        raise RankDeficientError([names[j] for j in piv[rank:]])
    beta_p = scipy.linalg.solve_triangular(R, Q.T @ (sw * y))
    beta = np.empty_like(beta_p)
    beta[piv] = beta_p
    return beta / scale


def _design(X: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(len(X)), X])


def _link_inverse(link: str, eta: np.ndarray) -> np.ndarray:
    if link == "identity":
        return eta
    if link == "inverse":
        return 1.0 / eta
    return np.exp(eta)


def _gamma_deviance(y, mu, w) -> float:
    return float(2.0 * np.sum(w * (-np.log(y / mu) + (y - mu) / mu)))


@dataclass
class GlmModel:
    link: str
    coefficients: np.ndarray
    weighted: bool
    column_names: list[str]
    iterations: int = 0
    converged: bool = True
    deviance: float = float("nan")

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.coefficients) - 1:
            raise ValueError(f"expected {len(self.coefficients) - 1} columns, got {X.shape}")
        return self.coefficients[0] + X @ self.coefficients[1:]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _link_inverse(self.link, self.linear_predictor(X))

    def to_dict(self) -> dict:
        return {
            "link": self.link,
            "coefficients": self.coefficients.tolist(),
            "weighted": self.weighted,
            "column_names": self.column_names,
            "iterations": self.iterations,
            "converged": self.converged,
            "deviance": self.deviance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> GlmModel:
        return cls(d["link"], np.asarray(d["coefficients"]), d["weighted"], list(d["column_names"]),
                   d["iterations"], d["converged"], d["deviance"])


def fit_glm(
    X,
    y,
    w=None,
    link: str = "identity",
    column_names: Sequence[str] | None = None,
    tol: float = 1e-8,
    max_iter: int = 100,
) -> GlmModel:
    """Fit a GLM with intercept.

    ``link='identity'`` is (weighted) least squares. ``'inverse'`` and
    ``'log'`` fit the gamma family by IRLS until the largest coefficient
    change is below ``tol * (1 + max|beta|)``. ``w=None`` means uniform
    weights. Rank deficiency raises :class:`RankDeficientError`.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    weighted = w is not None
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if len(y) != n or len(w) != n:
        raise ValueError("X, y and w must have the same number of rows")
    if n < p + 1:
        raise ValueError(f"need at least {p + 1} rows for {p} features plus intercept")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    if link not in LINKS:
        raise ValueError(f"unknown link {link!r}; expected one of {LINKS}")
    names = ["(intercept)"] + (list(column_names) if column_names is not None else [f"x{j}" for j in range(p)])
    D = _design(X)

    if link == "identity":
        beta = _wls_solve(D, y, w, names)
        dev = float(np.sum(w * (y - D @ beta) ** 2))
        return GlmModel(link, beta, weighted, names[1:], 1, True, dev)

    if np.any(y <= 0):
        raise ValueError("gamma family requires strictly positive responses")
    mu = np.full(n, np.average(y, weights=w))
    eta = 1.0 / mu if link == "inverse" else np.log(mu)
    beta = _wls_solve(D, eta, w, names)
    dev_old = _gamma_deviance(y, _link_inverse(link, D @ beta), w)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        eta = D @ beta
        mu = _link_inverse(link, eta)
        if link == "inverse":
            # g(mu) = 1/mu, g'(mu) = -1/mu^2, V(mu) = mu^2
            W = w * mu**2
            z = eta - (y - mu) / mu**2
        else:
            W = w
            z = eta + (y - mu) / mu
        new = _wls_solve(D, z, W, names)
        # step-halve while the inverse link leaves its domain or deviance rises
        step = new - beta
        for _ in range(30):
            cand = beta + step
            eta_c = D @ cand
            if link == "inverse" and np.any(eta_c <= 0):
                step = step / 2
                continue
            dev = _gamma_deviance(y, _link_inverse(link, eta_c), w)
            if np.isfinite(dev) and dev <= dev_old * (1 + 1e-12) + 1e-300:
                break
            step = step / 2
        else:
            raise NumericalError("IRLS step-halving failed to find an admissible step")
        beta = beta + step
        dev_old = dev
        if np.max(np.abs(step)) <= tol * (1 + np.max(np.abs(beta))):
            converged = True
            break
    return GlmModel(link, beta, weighted, names[1:], it, converged, dev_old)


def predict_glm(m: GlmModel, X) -> np.ndarray:
    return m.predict(X)


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PcaTransform:
    means: np.ndarray
    scales: np.ndarray
    loadings: np.ndarray  # columns are components, eigenvalue-descending
    eigenvalues: np.ndarray
    k: int
    standardize: bool
    column_names: list[str] = field(default_factory=list)

    def apply(self, X, k: int | None = None) -> np.ndarray:
        k = self.k if k is None else k
        if not 1 <= k <= self.k:
            raise ValueError(f"k must be in [1, {self.k}], got {k}")
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.means):
            raise ValueError(f"expected {len(self.means)} columns, got {X.shape}")
        return ((X - self.means) / self.scales) @ self.loadings[:, :k]

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "scales": self.scales.tolist(),
            "loadings": self.loadings.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "k": self.k,
            "standardize": self.standardize,
            "column_names": self.column_names,
        }

    @classmethod
    def from_dict(cls, d: dict) -> PcaTransform:
        return cls(np.asarray(d["means"]), np.asarray(d["scales"]), np.asarray(d["loadings"]),
                   np.asarray(d["eigenvalues"]), d["k"], d["standardize"], list(d["column_names"]))


def fit_pca(X, standardize: bool = True, k: int | None = None, column_names: Sequence[str] | None = None,
            rank_tol: float = RANK_TOL) -> PcaTransform:
    """Eigendecomposition of the sample covariance (or correlation) matrix.

    Retains components whose eigenvalue exceeds ``rank_tol * max eigenvalue``
    unless ``k`` is given. Each loading is signed so that its first nonzero
    entry is positive.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 rows")
    names = list(column_names) if column_names is not None else [f"x{j}" for j in range(p)]
    means = X.mean(axis=0)
    Z = X - means
    if standardize:
        scales = Z.std(axis=0, ddof=1)
        const = scales <= 1e-12 * np.maximum(np.abs(means), 1.0)
        if const.any():
            raise ValueError(f"cannot standardize constant column(s): {', '.join(names[j] for j in np.flatnonzero(const))}")
        Z = Z / scales
    else:
        scales = np.ones(p)
    C = (Z.T @ Z) / (n - 1)
    evals, evecs = np.linalg.eigh(C)
    order = np.argsort(-evals, kind="stable")
    evals, evecs = evals[order], evecs[:, order]
    for j in range(p):
        v = evecs[:, j]
        nz = np.flatnonzero(np.abs(v) > 1e-12 * np.abs(v).max())
        if v[nz[0]] < 0:
            evecs[:, j] = -v
    retained = int(np.sum(evals > rank_tol * evals[0])) if evals[0] > 0 else 0
    if k is not None:
        if not 1 <= k <= p:
            raise ValueError(f"k must be in [1, {p}]")
        retained = k
    return PcaTransform(means, scales, evecs, evals, retained, standardize, names)


def apply_pca(t: PcaTransform, X, k: int) -> np.ndarray:
    return t.apply(X, k)


# ---------------------------------------------------------------------------
# Principal-component regression


@dataclass
class PcrModel:
    pca: PcaTransform
    glm: GlmModel
    components: list[int]  # 0-based, in the order they enter the GLM

    @property
    def k(self) -> int:
        return len(self.components)

    def scores(self, X) -> np.ndarray:
        return self.pca.apply(X, max(self.components) + 1)[:, self.components]

    def predict(self, X) -> np.ndarray:
        return self.glm.predict(self.scores(X))

    def original_coefficients(self) -> np.ndarray:
        """Identity-link coefficients mapped back to the input columns (intercept first)."""
        if self.glm.link != "identity":
            raise ValueError("back-transformation is only linear for the identity link")
        gamma = self.glm.coefficients
        beta = self.pca.loadings[:, self.components] @ gamma[1:] / self.pca.scales
        return np.concatenate([[gamma[0] - self.pca.means @ beta], beta])

    def to_dict(self) -> dict:
        return {"components": list(self.components), "pca": self.pca.to_dict(), "glm": self.glm.to_dict()}


def fit_pcr_arrays(X, y, w=None, k: int | None = None, standardize: bool = True, link: str = "identity",
                   column_names: Sequence[str] | None = None, select: str = "variance") -> PcrModel:
    """PCA then a GLM on ``k`` component scores.

    ``select="variance"`` takes the leading ``k`` components;
    ``select="target_power"`` takes the ``k`` with the lowest single-component
    training WEPS (see :func:`rank_components`).
    """
    pca = fit_pca(X, standardize=standardize, column_names=column_names)
    k = pca.k if k is None else k
    if not 1 <= k <= pca.k:
        raise ValueError(f"k must be in [1, {pca.k}] (retained components), got {k}")
    if select == "variance":
        comps = list(range(k))
    elif select == "target_power":
        ranked = rank_components(X, y, w, weighted=w is not None, standardize=standardize, pca=pca)
        comps = [j for j, _ in ranked[:k]]
    else:
        raise ValueError(f"unknown component selection {select!r}")
    scores = pca.apply(X, max(comps) + 1)[:, comps]
    glm = fit_glm(scores, y, w, link=link, column_names=[f"pc{j + 1}" for j in comps])
    return PcrModel(pca, glm, comps)


def fit_glm_artifact(ds_train: Dataset, weighted: bool = True, link: str = "identity",
                     features: FeatureSpec | None = None) -> ModelArtifact:
    features = features or FeatureSpec()
    params = {"weighted": weighted, "link": link}
    return fit_artifact(
        "glm", params, ds_train, features,
        lambda X, y, w, feat: fit_glm(X, y, w if weighted else None, link, feat.names),
    )


def fit_pcr(ds_train: Dataset, k: int | None, weighted: bool = True, standardize: bool = True,
            link: str = "identity", features: FeatureSpec | None = None, select: str = "variance") -> ModelArtifact:
    """PCA (fitted on ``ds_train``) followed by a GLM on ``k`` component scores.

    ``k=None`` keeps every component above the rank tolerance.
    """
    if k is not None and k < 1:
        raise ValueError("k must be at least 1")
    features = features or FeatureSpec()
    params = {"k": k, "weighted": weighted, "standardize": standardize, "link": link, "select": select}
    return fit_artifact(
        "pcr", params, ds_train, features,
        lambda X, y, w, feat: fit_pcr_arrays(X, y, w if weighted else None, k, standardize, link, feat.names,
                                             select),
    )


def rank_components(X, y, w=None, weighted: bool = True, standardize: bool = True,
                    pca: PcaTransform | None = None) -> list[tuple[int, float]]:
    """Single-component regressions: (component index, train WEPS), best first.

    Component indices are 0-based in eigenvalue-descending order. WEPS is
    always evaluated with the observation weights when given.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w_eval = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    pca = pca or fit_pca(X, standardize=standardize)
    scores = pca.apply(X, pca.k)
    out = []
    for j in range(pca.k):
        m = fit_glm(scores[:, j:j + 1], y, w_eval if weighted else None)
        out.append((j, weps(y, m.predict(scores[:, j:j + 1]), w_eval)))
    out.sort(key=lambda t: (t[1], t[0]))
    return out


def rank_components_by_target_power(ds_train: Dataset, weighted: bool = True, standardize: bool = True,
                                    features: FeatureSpec | None = None) -> list[tuple[int, float]]:
    features = features or FeatureSpec()
    X = features.fit(ds_train).transform(ds_train)
    return rank_components(X, ds_train.target, ds_train.weights, weighted, standardize)
