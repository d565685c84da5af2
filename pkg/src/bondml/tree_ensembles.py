"""Weighted CART regression trees, bagging/random forests, and LS-Boost.

Split search minimises weighted squared error. Numeric splits sit at the
midpoint of adjacent distinct values and rows with ``x >= threshold`` go
right. Categorical columns (trade types) are split by exhaustive subset
search over their levels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from bondml import _tree_kernels as K
from bondml.artifact import FeatureSpec, ModelArtifact, fit_artifact
from bondml.dataset import Dataset
from bondml.errors import NumericalError
from bondml.evaluation import weps


@dataclass(frozen=True)
class TreeControls:
    max_depth: int | None = None
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    max_leaves: int | None = None
    m_try: int | None = None
    ccp_alpha: float = 0.0

    def __post_init__(self):
        if self.min_samples_split < 1 or self.min_samples_leaf < 1:
            raise ValueError("min_samples_split and min_samples_leaf must be >= 1")
        if self.max_leaves is not None and self.max_leaves < 2:
            raise ValueError("max_leaves must be >= 2")
        if self.ccp_alpha < 0:
            raise ValueError("ccp_alpha must be non-negative")


@dataclass
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    cat_mask: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray
    weight_sum: np.ndarray
    impurity: np.ndarray  # weighted SSE of the training rows at each node
    depth: np.ndarray
    n_features: int
    categorical: np.ndarray
    controls: TreeControls = field(default_factory=TreeControls)
    pruning: dict = field(default_factory=dict)

    @property
    def is_cat_node(self) -> np.ndarray:
        return np.where(self.feature >= 0, self.categorical[np.maximum(self.feature, 0)], False)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def features_used(self) -> set[int]:
        return set(int(f) for f in self.feature[self.feature >= 0])

    def _check(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got shape {X.shape}")
        return X

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row."""
        X = self._check(X)
        return K.apply_tree(X, self.feature, self.threshold, self.cat_mask, self.is_cat_node, self.left, self.right)

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        arrays = ("feature", "threshold", "cat_mask", "left", "right", "value", "n_samples", "weight_sum", "impurity", "depth")
        d = {a: getattr(self, a).tolist() for a in arrays}
        d.update(n_features=self.n_features, categorical=self.categorical.tolist(),
                 controls=asdict(self.controls), pruning=self.pruning)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> RegressionTree:
        ints = {"feature", "cat_mask", "left", "right", "n_samples", "depth"}
        kw = {}
        for a in ("feature", "threshold", "cat_mask", "left", "right", "value", "n_samples", "weight_sum", "impurity", "depth"):
            kw[a] = np.asarray(d[a], dtype=np.int64 if a in ints else float)
        return cls(**kw, n_features=d["n_features"], categorical=np.asarray(d["categorical"], dtype=bool),
                   controls=TreeControls(**d["controls"]), pruning=d.get("pruning", {}))


@dataclass
class Presorted:
    """Per-feature row order and the sorted values, both (n_features, n_rows)."""

    order: np.ndarray
    vals: np.ndarray

    def copy(self) -> Presorted:
        return Presorted(self.order.copy(), self.vals.copy())

    def restrict(self, mask: np.ndarray) -> Presorted:
        d = self.order.shape[0]
        keep = mask[self.order]
        m = int(mask.sum())
        return Presorted(np.ascontiguousarray(self.order[keep].reshape(d, m)),
                         np.ascontiguousarray(self.vals[keep].reshape(d, m)))


def presort(X: np.ndarray) -> Presorted:
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))
    vals = np.ascontiguousarray(np.take_along_axis(X, order.T, axis=0).T)
    return Presorted(order, vals)


def _check_categorical(X: np.ndarray, categorical: np.ndarray) -> None:
    for j in np.flatnonzero(categorical):
        col = X[:, j]
        if np.any(col != np.round(col)) or col.min() < 0 or col.max() > K.MAX_LEVEL:
            raise ValueError(f"categorical feature {j} must hold integer codes in [0, {K.MAX_LEVEL}]")
        if len(np.unique(col)) > 10:
            raise ValueError(f"categorical feature {j} has more than 10 levels")


def grow_tree(
    X,
    y,
    w=None,
    controls: TreeControls | None = None,
    categorical: Sequence[bool] | None = None,
    seed: int = 0,
    order: Presorted | None = None,
) -> RegressionTree:
    """Grow a weighted CART tree on arrays.

    ``order`` may supply presorted data (see :func:`presort`) restricted to
    the rows that take part; it is consumed in place.
    """
    controls = controls or TreeControls()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n == 0:
        raise ValueError("cannot fit a tree on zero rows")
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    cat = np.zeros(d, dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)
    if cat.any() and order is None:
        _check_categorical(X, cat)
    if controls.m_try is not None and not 1 <= controls.m_try <= d:
        raise ValueError(f"m_try must be in [1, {d}]")
    if order is None:
        order = presort(X)
    out = K.grow(
        order.vals, y, w, order.order, cat,
        -1 if controls.max_depth is None else controls.max_depth,
        controls.min_samples_split,
        controls.min_samples_leaf,
        -1 if controls.max_leaves is None else controls.max_leaves,
        -1 if controls.m_try is None else controls.m_try,
        seed,
    )
    tree = RegressionTree(*out, n_features=d, categorical=cat, controls=controls)
    if controls.ccp_alpha > 0:
        tree = prune_tree(tree, controls.ccp_alpha)
    return tree


def prune_tree(tree: RegressionTree, alpha: float) -> RegressionTree:
    """Minimal cost-complexity subtree for penalty ``alpha`` per leaf (squared error)."""
    n = tree.n_nodes
    cost = np.empty(n)
    collapse = np.zeros(n, dtype=bool)
    # children always have larger indices than their parent
    for i in range(n - 1, -1, -1):
        own = tree.impurity[i] + alpha
        if tree.feature[i] < 0:
            cost[i] = own
            continue
        sub = cost[tree.left[i]] + cost[tree.right[i]]
        if own <= sub:
            collapse[i] = True
            cost[i] = own
        else:
            cost[i] = sub
    keep, stack = [], [0]
    while stack:
        i = stack.pop()
        keep.append(i)
        if tree.feature[i] >= 0 and not collapse[i]:
            stack.extend((tree.right[i], tree.left[i]))
    keep = np.array(sorted(keep))
    remap = np.full(n, -1, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    feature = tree.feature[keep].copy()
    left = tree.left[keep].copy()
    right = tree.right[keep].copy()
    leafy = collapse[keep] | (feature < 0)
    feature[leafy] = -1
    left = np.where(leafy, -1, remap[np.maximum(left, 0)])
    right = np.where(leafy, -1, remap[np.maximum(right, 0)])
    pruned = replace(
        tree,
        feature=feature,
        threshold=np.where(leafy, 0.0, tree.threshold[keep]),
        cat_mask=np.where(leafy, 0, tree.cat_mask[keep]),
        left=left,
        right=right,
        value=tree.value[keep],
        n_samples=tree.n_samples[keep],
        weight_sum=tree.weight_sum[keep],
        impurity=tree.impurity[keep],
        depth=tree.depth[keep],
    )
    pruned.pruning = {"ccp_alpha": alpha, "leaves_before": tree.n_leaves, "leaves_after": pruned.n_leaves}
    return pruned


def predict_tree(t: RegressionTree, X) -> np.ndarray:
    return t.predict(X)


# ---------------------------------------------------------------------------
# Forests


@dataclass
class ForestModel:
    trees: list[RegressionTree]
    bootstrap: bool
    m_try: int | None
    seeds: list[int]
    oob_weps: list[float] = field(default_factory=list)
    oob_error: float = float("nan")

    def tree_predictions(self, X) -> np.ndarray:
        return np.vstack([t.predict(X) for t in self.trees])

    def predict(self, X) -> np.ndarray:
        return self.tree_predictions(X).mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "bootstrap": self.bootstrap,
            "m_try": self.m_try,
            "seeds": self.seeds,
            "oob_weps": self.oob_weps,
            "oob_error": self.oob_error,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> ForestModel:
        return cls([RegressionTree.from_dict(t) for t in d["trees"]], d["bootstrap"], d["m_try"], d["seeds"],
                   d.get("oob_weps", []), d.get("oob_error", float("nan")))


def grow_forest(
    X,
    y,
    w=None,
    n_trees: int = 100,
    m_try: int | None = None,
    bootstrap: bool = True,
    controls: TreeControls | None = None,
    seed: int = 0,
    categorical: Sequence[bool] | None = None,
) -> ForestModel:
    """Bagged trees; tree ``i`` uses seed ``seed + i`` for its resample and feature draws.

    ``m_try=None`` considers every feature at each split (plain bagging).
    Out-of-bag WEPS is recorded per tree, and for the forest as a whole over
    rows that are out of bag for at least one tree.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be at least 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if m_try is not None and not 1 <= m_try <= d:
        raise ValueError(f"m_try={m_try} exceeds the {d} available features")
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    controls = replace(controls or TreeControls(), m_try=m_try)
    cat = np.zeros(d, dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)
    if cat.any():
        _check_categorical(X, cat)
    base_order = presort(X)
    trees, seeds, oob_scores = [], [], []
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n)
    for i in range(n_trees):
        s = seed + i
        if bootstrap:
            rng = np.random.default_rng(s)
            counts = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(float)
            inbag = counts > 0
            tree = grow_tree(X, y, w * counts, controls, cat, seed=s, order=base_order.restrict(inbag))
            oob = ~inbag
            if oob.any():
                pred = tree.predict(X[oob])
                oob_scores.append(weps(y[oob], pred, w[oob]))
                oob_sum[oob] += pred
                oob_cnt[oob] += 1
            else:
                oob_scores.append(float("nan"))
        else:
            tree = grow_tree(X, y, w, controls, cat, seed=s, order=base_order.copy())
        trees.append(tree)
        seeds.append(s)
    covered = oob_cnt > 0
    oob_error = weps(y[covered], oob_sum[covered] / oob_cnt[covered], w[covered]) if covered.any() else float("nan")
    return ForestModel(trees, bootstrap, m_try, seeds, oob_scores if bootstrap else [], oob_error)


# ---------------------------------------------------------------------------
# LS-Boost


@dataclass
class BoostModel:
    f0: float
    trees: list[RegressionTree]
    multipliers: list[float]
    shrinkage: float
    J: int
    train_loss: list[float]  # weighted mean squared error after 0..M stages

    def staged_predict(self, X, stages: int | None = None) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        stages = len(self.trees) if stages is None else stages
        F = np.full(len(X), self.f0)
        for t, rho in zip(self.trees[:stages], self.multipliers[:stages]):
            F += self.shrinkage * rho * t.predict(X)
        return F

    def predict(self, X) -> np.ndarray:
        return self.staged_predict(X)

    def to_dict(self) -> dict:
        return {
            "f0": self.f0,
            "shrinkage": self.shrinkage,
            "J": self.J,
            "multipliers": self.multipliers,
            "train_loss": self.train_loss,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> BoostModel:
        return cls(d["f0"], [RegressionTree.from_dict(t) for t in d["trees"]], d["multipliers"], d["shrinkage"],
                   d["J"], d["train_loss"])


def grow_ls_boost(
    X,
    y,
    w=None,
    n_stages: int = 300,
    J: int = 6,
    shrinkage: float = 0.1,
    seed: int = 0,
    categorical: Sequence[bool] | None = None,
    min_samples_leaf: int = 1,
) -> BoostModel:
    """Least-squares boosting with J-leaf trees fitted to current residuals.

    Leaf values are weighted residual means, so the squared-loss line search
    gives a unit multiplier on every stage; ``shrinkage`` scales each step.
    """
    if n_stages < 1:
        raise ValueError("n_stages must be at least 1")
    if J < 2:
        raise ValueError("J must be at least 2")
    if not 0 < shrinkage <= 1:
        raise ValueError("shrinkage must lie in (0, 1]")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    W = w.sum()
    f0 = float(np.sum(w * y) / W)
    F = np.full(len(y), f0)
    loss = [float(np.sum(w * (y - F) ** 2) / W)]
    controls = TreeControls(max_leaves=J, min_samples_leaf=min_samples_leaf)
    cat = np.zeros(X.shape[1], dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)
    if cat.any():
        _check_categorical(X, cat)
    base_order = presort(X)
    trees, mult = [], []
    for m in range(n_stages):
        resid = y - F
        tree = grow_tree(X, resid, w, controls, cat, seed=seed + m, order=base_order.copy())
        F = F + shrinkage * tree.predict(X)
        trees.append(tree)
        mult.append(1.0)
        loss.append(float(np.sum(w * (y - F) ** 2) / W))
        if not math.isfinite(loss[-1]):
            raise NumericalError(f"boosting loss became non-finite at stage {m + 1}")
    return BoostModel(f0, trees, mult, shrinkage, J, loss)


# ---------------------------------------------------------------------------
# Dataset-level wrappers


def _tree_features(features: FeatureSpec | None) -> FeatureSpec:
    return features or FeatureSpec(encoding="ordinal")


def fit_tree(ds_train: Dataset, controls: TreeControls | None = None, features: FeatureSpec | None = None,
             seed: int = 0) -> ModelArtifact:
    controls = controls or TreeControls()
    return fit_artifact(
        "tree", asdict(controls), ds_train, _tree_features(features),
        lambda X, y, w, feat: grow_tree(X, y, w, controls, feat.categorical, seed),
    )


def fit_forest(ds_train: Dataset, n_trees: int = 100, m_try: int | None = None, bootstrap: bool = True,
               controls: TreeControls | None = None, seed: int = 0,
               features: FeatureSpec | None = None) -> ModelArtifact:
    controls = controls or TreeControls()
    params = {"n_trees": n_trees, "m_try": m_try, "bootstrap": bootstrap, "seed": seed, **asdict(controls)}
    return fit_artifact(
        "forest", params, ds_train, _tree_features(features),
        lambda X, y, w, feat: grow_forest(X, y, w, n_trees, m_try, bootstrap, controls, seed, feat.categorical),
    )


def fit_ls_boost(ds_train: Dataset, n_stages: int = 300, J: int = 6, shrinkage: float = 0.1, seed: int = 0,
                 features: FeatureSpec | None = None, min_samples_leaf: int = 1) -> ModelArtifact:
    params = {"n_stages": n_stages, "J": J, "shrinkage": shrinkage, "seed": seed, "min_samples_leaf": min_samples_leaf}
    return fit_artifact(
        "ls_boost", params, ds_train, _tree_features(features),
        lambda X, y, w, feat: grow_ls_boost(X, y, w, n_stages, J, shrinkage, seed, feat.categorical, min_samples_leaf),
    )


# ---------------------------------------------------------------------------
# Random-forest feature ranking


@dataclass
class FeatureRanking:
    ranking: list[tuple[str, float]]  # survivors, best first; unscored ones last with NaN
    rounds: list[dict]

    def to_dict(self) -> dict:
        return {
            "ranking": [{"feature": f, "score": None if math.isnan(s) else s} for f, s in self.ranking],
            "rounds": self.rounds,
        }


def _impurity_importance(trees: Sequence[RegressionTree], d: int) -> np.ndarray:
    """Total weighted-SSE decrease per feature, summed over the trees."""
    out = np.zeros(d)
    for t in trees:
        inner = np.flatnonzero(t.feature >= 0)
        dec = t.impurity[inner] - t.impurity[t.left[inner]] - t.impurity[t.right[inner]]
        np.add.at(out, t.feature[inner], dec)
    return out


def rank_features_rf(
    X,
    y,
    w=None,
    names: Sequence[str] | None = None,
    target_count: int = 1,
    appearance_threshold: float = 0.25,
    drop_fraction: float = 0.20,
    n_trees: int = 50,
    m_try: int | None = None,
    controls: TreeControls | None = None,
    seed: int = 0,
    categorical: Sequence[bool] | None = None,
) -> FeatureRanking:
    """Recursive elimination driven by per-tree out-of-bag scores.

    Each round fits a forest on the surviving features. A feature that
    appears in at least ``appearance_threshold`` of the trees is scored by
    the mean of ``-OOB WEPS`` over the trees that use it; others stay
    unranked for the round. The worst ``ceil(drop_fraction * scored)``
    scored features are dropped, never going below ``target_count``. Equal
    scores are ordered by total impurity decrease, then by column position.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    names = list(names) if names is not None else [f"x{j}" for j in range(d)]
    cat = np.zeros(d, dtype=bool) if categorical is None else np.asarray(categorical, dtype=bool)
    if not 1 <= target_count < d:
        raise ValueError(f"target_count must be in [1, {d - 1}]")
    controls = controls or TreeControls(max_depth=6, min_samples_leaf=5)
    alive = list(range(d))
    rounds: list[dict] = []
    empty_streak = 0
    scores: dict[int, float] = {}
    r = 0
    while len(alive) > target_count:
        sub = X[:, alive]
        mt = None if m_try is None else min(m_try, len(alive))
        if mt is None:
            mt = max(1, len(alive) // 3)
        forest = grow_forest(sub, y, w, n_trees, mt, True, controls, seed + 1000 * r, cat[alive])
        used = [t.features_used() for t in forest.trees]
        scores = {}
        for local, j in enumerate(alive):
            containing = [s for s, u in zip(forest.oob_weps, used) if local in u and not math.isnan(s)]
            if len(containing) >= appearance_threshold * n_trees and containing:
                scores[j] = -float(np.mean(containing))
        n_drop = min(math.ceil(drop_fraction * len(scores)), len(alive) - target_count) if scores else 0
        # tied OOB scores (common when every tree uses every feature) fall back to impurity decrease
        gain = dict(zip(alive, _impurity_importance(forest.trees, len(alive))))
        dropped = sorted(scores, key=lambda j: (scores[j], gain[j], -j))[:n_drop]
        rounds.append({
            "round": r,
            "n_features": len(alive),
            "scored": {names[j]: scores[j] for j in scores},
            "impurity_decrease": {names[j]: float(gain[j]) for j in alive},
            "dropped": [names[j] for j in dropped],
        })
        if not dropped:
            empty_streak += 1
            if empty_streak >= 2:
                raise NumericalError(
                    f"feature ranking stalled: no feature reached the {appearance_threshold:.0%} appearance "
                    f"threshold in two consecutive rounds ({len(alive)} features left)"
                )
        else:
            empty_streak = 0
            alive = [j for j in alive if j not in dropped]
        r += 1
    # final scores for the survivors come from the last forest that saw them
    last = {}
    for rd in rounds:
        last.update(rd["scored"])
    ranking = [(names[j], last.get(names[j], float("nan"))) for j in alive]
    ranking.sort(key=lambda t: (math.isnan(t[1]), -t[1] if not math.isnan(t[1]) else 0.0))
    return FeatureRanking(ranking, rounds)


def rf_feature_ranking(ds_train: Dataset, target_count: int, appearance_threshold: float = 0.25,
                       drop_fraction: float = 0.20, n_trees: int = 50, m_try: int | None = None,
                       controls: TreeControls | None = None, seed: int = 0,
                       features: FeatureSpec | None = None) -> FeatureRanking:
    feat = _tree_features(features).fit(ds_train)
    X = feat.transform(ds_train)
    return rank_features_rf(X, ds_train.target, ds_train.weights, feat.names, target_count,
                            appearance_threshold, drop_fraction, n_trees, m_try, controls, seed, feat.categorical)
