"""Fitted-model wrapper shared by every method family.

A :class:`ModelArtifact` pairs an array-level model (anything with
``predict(X)`` and ``to_dict()``) with the :class:`Featurizer` that turns a
:class:`~bondml.dataset.Dataset` into its design matrix. Featurizers are
fitted on training rows only, so a transform learned from data (the
time-series forecast table) can be applied to test rows but never built
from them.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from bondml.dataset import SCHEMA_VERSION, Dataset, feature_columns, feature_matrix, is_categorical
from bondml.timeseries.hybrid import TS_FEATURE, GroupArmaTable, augment_with_ts_feature, build_group_arma_table


@dataclass(frozen=True)
class FeatureSpec:
    encoding: str = "one_hot"
    columns: tuple[str, ...] | None = None
    ts_augment: bool = False
    ts_samples_per_group: int = 10
    ts_seed: int = 0

    def fit(self, ds_train: Dataset) -> Featurizer:
        table = None
        if self.ts_augment:
            table = build_group_arma_table(ds_train, self.ts_samples_per_group, self.ts_seed)
        feat = Featurizer(self, table, [])
        _, names = feat._matrix(ds_train)
        feat.names = names
        return feat


@dataclass
class Featurizer:
    spec: FeatureSpec
    ts_table: GroupArmaTable | None
    names: list[str] = field(default_factory=list)

    def _matrix(self, ds: Dataset):
        columns = tuple(self.spec.columns) if self.spec.columns is not None else feature_columns()
        if self.ts_table is not None:
            if TS_FEATURE in ds.extra:
                ds = Dataset(ds.current, ds.history, {}, ds.schema_version)
            ds = augment_with_ts_feature(ds, self.ts_table)
            columns = columns + (TS_FEATURE,)
        return feature_matrix(ds, self.spec.encoding, columns)

    def transform(self, ds: Dataset) -> np.ndarray:
        X, names = self._matrix(ds)
        if self.names and names != self.names:
            raise ValueError("feature columns differ from those seen in training")
        return X

    @property
    def categorical(self) -> np.ndarray:
        return np.array([self.spec.encoding == "ordinal" and is_categorical(n) for n in self.names], dtype=bool)

    def to_dict(self) -> dict:
        d = {"spec": asdict(self.spec), "names": list(self.names)}
        if self.ts_table is not None:
            d["ts_table"] = self.ts_table.to_dict()
        return d


@dataclass
class ModelArtifact:
    family: str
    params: dict
    model: Any
    featurizer: Featurizer
    fit_seconds: float = float("nan")

    def predict(self, ds: Dataset) -> np.ndarray:
        return self.model.predict(self.featurizer.transform(ds))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "family": self.family,
            "params": self.params,
            "fit_seconds": self.fit_seconds,
            "features": self.featurizer.to_dict(),
            "model": self.model.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def fit_artifact(
    family: str,
    params: dict,
    ds_train: Dataset,
    features: FeatureSpec,
    fit: Callable[[np.ndarray, np.ndarray, np.ndarray, Featurizer], Any],
) -> ModelArtifact:
    """Featurize ``ds_train`` then call ``fit(X, y, w, featurizer)``; time the whole fit."""
    t0 = time.perf_counter()
    feat = features.fit(ds_train)
    X = feat.transform(ds_train)
    model = fit(X, ds_train.target, ds_train.weights, feat)
    return ModelArtifact(family, dict(params), model, feat, time.perf_counter() - t0)
