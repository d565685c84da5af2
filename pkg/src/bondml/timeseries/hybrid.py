"""Per-bond-type ARMA(1,1) table and the forecast feature built from it.

For each bond type a few training records are sampled; each record's 10-lag
series of (trade price - curve price), oldest first, gets its own ARMA(1,1)
fit, and the converged fits are averaged parameter-wise. Every record is then
given the one-step forecast of its own difference series under its group's
averaged parameters.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from bondml.dataset import Dataset
from bondml.timeseries._kernels import forecast_batch
from bondml.timeseries.arma import ArmaParams, fit_arma11

TS_FEATURE = "ts_price_curve_delta_forecast"


def difference_series(ds: Dataset) -> np.ndarray:
    """(n, 10) trade-minus-curve price history, oldest to newest."""
    return np.ascontiguousarray(ds.history["trade_price"] - ds.history["curve_price"])


@dataclass(frozen=True)
class GroupEntry:
    params: ArmaParams
    n_sampled: int
    n_converged: int
    fallback: bool

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "n_sampled": self.n_sampled,
                "n_converged": self.n_converged, "fallback": self.fallback}

    @classmethod
    def from_dict(cls, d: dict) -> GroupEntry:
        return cls(ArmaParams.from_dict(d["params"]), d["n_sampled"], d["n_converged"], d["fallback"])


@dataclass(frozen=True)
class GroupArmaTable:
    entries: dict[int, GroupEntry]
    global_entry: GroupEntry
    samples_per_group: int = 10
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __contains__(self, bond_type_id) -> bool:
        return int(bond_type_id) in self.entries

    def lookup(self, bond_type_id) -> GroupEntry:
        return self.entries.get(int(bond_type_id), self.global_entry)

    def to_dict(self) -> dict:
        return {
            "samples_per_group": self.samples_per_group,
            "seed": self.seed,
            "global": self.global_entry.to_dict(),
            "groups": {str(k): v.to_dict() for k, v in sorted(self.entries.items())},
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> GroupArmaTable:
        entries = {int(k): GroupEntry.from_dict(v) for k, v in d["groups"].items()}
        return cls(entries, GroupEntry.from_dict(d["global"]), d["samples_per_group"], d["seed"], d.get("meta", {}))

    @classmethod
    def from_json(cls, text: str) -> GroupArmaTable:
        return cls.from_dict(json.loads(text))


def _average(fits: list[ArmaParams], series: np.ndarray) -> GroupEntry:
    ok = [p for p in fits if p.converged]
    if not ok:
        mean = float(series.mean())
        return GroupEntry(ArmaParams(mean, 0.0, 0.0, float(series.var()), False, float("nan"), series.shape[-1]),
                          len(fits), 0, True)
    avg = ArmaParams(
        float(np.mean([p.c for p in ok])),
        float(np.mean([p.phi for p in ok])),
        float(np.mean([p.theta for p in ok])),
        float(np.mean([p.sigma2 for p in ok])),
        True,
        float("nan"),
        series.shape[-1],
    )
    return GroupEntry(avg, len(fits), len(ok), False)


def build_group_arma_table(ds_train: Dataset, samples_per_group: int = 10, seed: int = 0) -> GroupArmaTable:
    """Fit and average ARMA(1,1) models on up to ``samples_per_group`` records per bond type.

    Groups are visited in ascending id order with one seeded generator, so the
    table depends only on the training rows, ``samples_per_group`` and ``seed``.
    """
    if len(ds_train) == 0:
        raise ValueError("training set is empty")
    if samples_per_group < 1:
        raise ValueError("samples_per_group must be at least 1")
    rng = np.random.default_rng(seed)
    D = difference_series(ds_train)
    groups = ds_train.bond_type_ids
    entries = {}
    all_fits, all_series = [], []
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        pick = np.sort(rng.choice(idx, size=min(samples_per_group, len(idx)), replace=False))
        fits = [fit_arma11(D[i]) for i in pick]
        entries[int(g)] = _average(fits, D[pick])
        all_fits.extend(fits)
        all_series.append(D[pick])
    global_entry = _average(all_fits, np.concatenate(all_series))
    meta = {"n_groups": len(entries), "n_fallback": sum(e.fallback for e in entries.values()),
            "n_fits": len(all_fits), "n_converged": sum(p.converged for p in all_fits)}
    return GroupArmaTable(entries, global_entry, samples_per_group, seed, meta)


def augment_with_ts_feature(ds: Dataset, table: GroupArmaTable) -> Dataset:
    """Append the one-step forecast of each record's difference series as a new column.

    Bond types missing from ``table`` use its global-average parameters; their
    ids and row count are recorded in the returned dataset's ``meta``.
    """
    D = difference_series(ds)
    groups = ds.bond_type_ids.astype(np.int64)
    c = np.empty(len(ds))
    phi = np.empty(len(ds))
    theta = np.empty(len(ds))
    unknown = []
    for g in np.unique(groups):
        rows = groups == g
        if int(g) not in table.entries:
            unknown.append(int(g))
        p = table.lookup(g).params
        c[rows], phi[rows], theta[rows] = p.c, p.phi, p.theta
    values = forecast_batch(D, c, phi, theta) if len(ds) else np.empty(0)
    out = ds.with_column(TS_FEATURE, values)
    meta = dict(out.meta)
    meta["ts_unknown_bond_types"] = unknown
    meta["ts_unknown_rows"] = int(np.isin(groups, unknown).sum())
    return Dataset(out.current, out.history, out.extra, out.schema_version, meta)
