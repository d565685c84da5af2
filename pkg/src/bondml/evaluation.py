"""Weighted error metric, significance interval, weight-balanced splits, CV driver."""

from __future__ import annotations

import json
import logging
import math
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Protocol

import numpy as np

from bondml.dataset import Dataset

logger = logging.getLogger(__name__)

Z_95 = 1.96
N_DECILES = 10


def weps(y_true, y_pred, w) -> float:
    """Weighted error in prediction per sample: sum(w*|y - yhat|) / sum(w)."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (y_true.shape == y_pred.shape == w.shape) or y_true.ndim != 1:
        raise ValueError(
            f"length mismatch: y_true {y_true.shape}, y_pred {y_pred.shape}, w {w.shape}"
        )
    if y_true.size == 0:
        raise ValueError("weps needs at least one sample")
    if np.any(~(w > 0)):
        raise ValueError("weights must be strictly positive")
    return float(np.sum(w * np.abs(y_true - y_pred)) / np.sum(w))


@dataclass(frozen=True)
class SignificanceResult:
    d: float
    lo: float
    hi: float
    sigma: float
    variance: float
    n: int
    significant: bool
    outside_unit_interval: bool

    @property
    def half_width(self) -> float:
        return Z_95 * self.sigma

    def to_dict(self) -> dict:
        return asdict(self)


def significance_interval(e1: float, e2: float, n: int) -> SignificanceResult:
    """95% interval for the difference of two error rates measured on n records.

    Uses var(d) ~ (e1(1-e1) + e2(1-e2)) / n. When either error lies outside
    [0, 1] the Bernoulli form does not apply; the result is flagged and, if
    the variance comes out negative, sigma and the bounds are NaN and the
    difference is never declared significant.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    d = e1 - e2
    var = (e1 * (1 - e1) + e2 * (1 - e2)) / n
    outside = not (0.0 <= e1 <= 1.0 and 0.0 <= e2 <= 1.0)
    sigma = math.sqrt(var) if var >= 0 else float("nan")
    lo, hi = d - Z_95 * sigma, d + Z_95 * sigma
    significant = bool(not math.isnan(sigma) and (lo > 0 or hi < 0))
    return SignificanceResult(d, lo, hi, sigma, var, int(n), significant, outside)


# ---------------------------------------------------------------------------
# Splitting


@dataclass(frozen=True)
class SplitPair:
    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int
    balance_statistic: float
    stratified: bool = True

    @property
    def fallback(self) -> bool:
        return not self.stratified


def ks_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def _largest_remainder(sizes: np.ndarray, frac: float, total: int, rng: np.random.Generator) -> np.ndarray:
    quota = sizes * frac
    counts = np.floor(quota).astype(int)
    rem = quota - counts
    short = total - counts.sum()
    if short > 0:
        # random tie-break among equal remainders
        order = np.lexsort((rng.random(len(sizes)), -rem))
        counts[order[:short]] += 1
    return counts


def weight_balanced_split(ds_or_weights, train_frac: float = 0.70, seed: int = 0) -> SplitPair:
    """Weight-decile stratified train/test split.

    Rows are sorted by weight and cut into deciles; each decile contributes
    its share of training rows, drawn uniformly at random, with per-decile
    counts set by largest remainder so that ``|train| = round(train_frac*n)``.
    Fewer than 20 rows cannot fill the deciles and fall back to a plain
    random split (``stratified=False``).
    """
    w = ds_or_weights.weights if isinstance(ds_or_weights, Dataset) else np.asarray(ds_or_weights, dtype=float)
    n = len(w)
    if n < 10:
        raise ValueError(f"need at least 10 rows to split, got {n}")
    if not 0 < train_frac < 1:
        raise ValueError("train_frac must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    n_train = int(round(train_frac * n))
    stratified = n >= 2 * N_DECILES
    if stratified:
        order = np.argsort(w, kind="stable")
        strata = np.array_split(order, N_DECILES)
        counts = _largest_remainder(np.array([len(s) for s in strata]), train_frac, n_train, rng)
        train_parts = []
        for s, k in zip(strata, counts):
            train_parts.append(rng.permutation(s)[:k])
        train = np.concatenate(train_parts)
    else:
        logger.warning("%d rows are too few to stratify by weight decile; using a random split", n)
        train = rng.permutation(n)[:n_train]
    mask = np.zeros(n, dtype=bool)
    mask[train] = True
    train_idx = np.flatnonzero(mask)
    test_idx = np.flatnonzero(~mask)
    return SplitPair(train_idx, test_idx, seed, ks_distance(w[train_idx], w[test_idx]), stratified)


# ---------------------------------------------------------------------------
# Cross-validation driver


class ModelArtifact(Protocol):
    family: str
    params: dict

    def predict(self, ds: Dataset) -> np.ndarray: ...


Trainer = Callable[[Dataset], ModelArtifact]


@dataclass
class InstanceResult:
    index: int
    seed: int
    n_train: int
    n_test: int
    balance_statistic: float
    train_weps: float = float("nan")
    test_weps: float = float("nan")
    fit_seconds: float = float("nan")
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class CvResult:
    label: str
    hyperparameters: dict
    instances: list[InstanceResult]
    artifacts: list[Any] = field(default_factory=list, repr=False, compare=False)

    @property
    def completed(self) -> list[InstanceResult]:
        return [r for r in self.instances if not r.failed]

    @property
    def n_failed(self) -> int:
        return sum(r.failed for r in self.instances)

    def _mean(self, attr: str) -> float:
        vals = [getattr(r, attr) for r in self.completed]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def mean_train_weps(self) -> float:
        return self._mean("train_weps")

    @property
    def mean_test_weps(self) -> float:
        return self._mean("test_weps")

    @property
    def mean_fit_seconds(self) -> float:
        return self._mean("fit_seconds")

    @property
    def n_test(self) -> int:
        sizes = {r.n_test for r in self.instances}
        if len(sizes) != 1:
            raise ValueError(f"instances have differing test sizes {sorted(sizes)}")
        return sizes.pop()

    @property
    def n_train(self) -> int:
        sizes = {r.n_train for r in self.instances}
        if len(sizes) != 1:
            raise ValueError(f"instances have differing train sizes {sorted(sizes)}")
        return sizes.pop()

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "hyperparameters": self.hyperparameters,
            "mean_train_weps": self.mean_train_weps,
            "mean_test_weps": self.mean_test_weps,
            "mean_fit_seconds": self.mean_fit_seconds,
            "n_failed": self.n_failed,
            "instances": [asdict(r) for r in self.instances],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=True)

    @classmethod
    def from_dict(cls, d: dict) -> CvResult:
        return cls(d["label"], d.get("hyperparameters", {}), [InstanceResult(**r) for r in d["instances"]])


def run_cv(
    ds: Dataset,
    trainer: Trainer,
    n_instances: int = 5,
    base_seed: int = 0,
    train_frac: float = 0.70,
    label: str = "",
    hyperparameters: dict | None = None,
    n_jobs: int = 1,
    keep_artifacts: bool = False,
) -> CvResult:
    """Fit ``trainer`` on ``n_instances`` weight-balanced splits (seeds base_seed+i).

    Wall time covers the trainer call only. A trainer exception marks that
    instance failed; means are taken over the completed instances.
    """
    if n_instances < 1:
        raise ValueError("n_instances must be at least 1")

    def one(i: int):
        split = weight_balanced_split(ds, train_frac, seed=base_seed + i)
        res = InstanceResult(i, base_seed + i, len(split.train_indices), len(split.test_indices), split.balance_statistic)
        train = ds.take(split.train_indices)
        test = ds.take(split.test_indices)
        artifact = None
        try:
            t0 = time.perf_counter()
            artifact = trainer(train)
            res.fit_seconds = time.perf_counter() - t0
            res.train_weps = weps(train.target, artifact.predict(train), train.weights)
            res.test_weps = weps(test.target, artifact.predict(test), test.weights)
        except Exception as exc:  # surfaced in the result, never swallowed silently
            res.error = f"{type(exc).__name__}: {exc}"
            logger.error("instance %d failed: %s\n%s", i, res.error, traceback.format_exc())
        return res, artifact

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outputs = list(pool.map(one, range(n_instances)))
    else:
        outputs = [one(i) for i in range(n_instances)]
    outputs.sort(key=lambda o: o[0].index)
    return CvResult(
        label=label,
        hyperparameters=dict(hyperparameters or {}),
        instances=[o[0] for o in outputs],
        artifacts=[o[1] for o in outputs] if keep_artifacts else [],
    )
