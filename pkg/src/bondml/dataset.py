"""Bond-trade schema, CSV I/O, synthetic data, and exploratory statistics.

A record carries 11 current-trade attributes and a 10-trade history of five
variables, 61 columns in all. Column names follow the public Benchmark Bond
Trade Price Challenge layout::

    id, bond_id, trade_price, weight, current_coupon, time_to_maturity,
    is_callable, reported_delay, trade_size, trade_type, curve_based_price,
    received_time_diff_last{k}, trade_price_last{k}, trade_size_last{k},
    trade_type_last{k}, curve_based_price_last{k}        for k = 1..10

In the CSV (and in :class:`BondRecord`) lag ``k = 1`` is the most recent past
trade. Inside :class:`Dataset` each history is an ``(n, 10)`` array ordered
oldest to newest, so column ``10 - k`` holds lag ``k``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from bondml.errors import DataError, SchemaError

SCHEMA_VERSION = "bond-trade-61/v1"
N_LAGS = 10
TRADE_TYPES = (2, 3, 4)
REFERENCE_TRADE_TYPE = 4

CURRENT_COLUMNS = (
    "id",
    "bond_id",
    "trade_price",
    "weight",
    "current_coupon",
    "time_to_maturity",
    "is_callable",
    "reported_delay",
    "trade_size",
    "trade_type",
    "curve_based_price",
)

# internal history name -> CSV prefix (suffixed by the lag number)
HISTORY_VARIABLES = {
    "time_diff": "received_time_diff_last",
    "trade_price": "trade_price_last",
    "trade_size": "trade_size_last",
    "trade_type": "trade_type_last",
    "curve_price": "curve_based_price_last",
}

HISTORY_COLUMNS = tuple(
    f"{prefix}{k}" for k in range(1, N_LAGS + 1) for prefix in HISTORY_VARIABLES.values()
)
COLUMNS = CURRENT_COLUMNS + HISTORY_COLUMNS
TARGET_COLUMN = "trade_price"

_PREFIX_TO_VAR = {prefix: var for var, prefix in HISTORY_VARIABLES.items()}

CATEGORICAL_COLUMNS = frozenset(
    ["trade_type"] + [f"trade_type_last{k}" for k in range(1, N_LAGS + 1)]
)
NOMINAL_COLUMNS = frozenset({"id", "bond_id", "is_callable"}) | CATEGORICAL_COLUMNS
CONTINUOUS_COLUMNS = tuple(c for c in COLUMNS if c not in NOMINAL_COLUMNS)


def split_history_name(name: str) -> tuple[str, int] | None:
    """Map ``trade_price_last3`` to ``("trade_price", 3)``; None for current columns."""
    for prefix, var in _PREFIX_TO_VAR.items():
        if name.startswith(prefix):
            suffix = name[len(prefix):]
            if suffix.isdigit() and 1 <= int(suffix) <= N_LAGS:
                return var, int(suffix)
    return None


@dataclass(frozen=True)
class BondRecord:
    """One row of the schema; history tuples are in source order (lag 1 first)."""

    row_id: int
    bond_type_id: int
    weight: float
    current_coupon: float
    time_to_maturity: float
    is_callable: int
    reporting_delay: float
    trade_size: float
    trade_type: int
    curve_based_price: float
    trade_price: float
    time_diff: tuple[float, ...]
    trade_price_hist: tuple[float, ...]
    trade_size_hist: tuple[float, ...]
    trade_type_hist: tuple[int, ...]
    curve_price_hist: tuple[float, ...]

    def __post_init__(self):
        problem = _record_problem(self)
        if problem:
            raise DataError(problem)

    @property
    def field_count(self) -> int:
        return len(CURRENT_COLUMNS) + len(HISTORY_VARIABLES) * N_LAGS


_RECORD_CURRENT = {
    "id": "row_id",
    "bond_id": "bond_type_id",
    "trade_price": "trade_price",
    "weight": "weight",
    "current_coupon": "current_coupon",
    "time_to_maturity": "time_to_maturity",
    "is_callable": "is_callable",
    "reported_delay": "reporting_delay",
    "trade_size": "trade_size",
    "trade_type": "trade_type",
    "curve_based_price": "curve_based_price",
}
_RECORD_HISTORY = {
    "time_diff": "time_diff",
    "trade_price": "trade_price_hist",
    "trade_size": "trade_size_hist",
    "trade_type": "trade_type_hist",
    "curve_price": "curve_price_hist",
}


def _record_problem(rec: BondRecord) -> str | None:
    for var, attr in _RECORD_HISTORY.items():
        if len(getattr(rec, attr)) != N_LAGS:
            return f"{attr} must have {N_LAGS} entries"
    row = {col: np.array([float(getattr(rec, attr))]) for col, attr in _RECORD_CURRENT.items()}
    hist = {
        var: np.array([getattr(rec, attr)[::-1]], dtype=float)
        for var, attr in _RECORD_HISTORY.items()
    }
    bad, reasons = _validate(row, hist)
    return reasons[0] if bad[0] else None


def _validate(current: Mapping[str, np.ndarray], history: Mapping[str, np.ndarray]):
    """Vectorised invariant check; returns (bad_mask, first reason per row or '')."""
    n = len(current["id"])
    reasons = np.full(n, "", dtype=object)

    def flag(mask, text):
        hit = mask & (reasons == "")
        reasons[hit] = text

    for name, arr in current.items():
        flag(~np.isfinite(arr), f"missing or non-finite value in '{name}'")
    for var, arr in history.items():
        flag(~np.all(np.isfinite(arr), axis=1), f"missing or non-finite value in '{HISTORY_VARIABLES[var]}*'")

    flag(current["weight"] <= 0, "non-positive weight")
    flag(current["trade_price"] <= 0, "non-positive trade_price")
    flag(current["curve_based_price"] <= 0, "non-positive curve_based_price")
    flag(current["current_coupon"] < 0, "negative current_coupon")
    flag(current["time_to_maturity"] <= 0, "non-positive time_to_maturity")
    flag(~np.isin(current["is_callable"], (0, 1)), "is_callable must be 0 or 1")
    flag(current["reported_delay"] < 0, "negative reported_delay")
    flag(current["trade_size"] <= 0, "non-positive trade_size")
    flag(~np.isin(current["trade_type"], TRADE_TYPES), "trade_type must be one of 2, 3, 4")
    flag(np.any(history["time_diff"] < 0, axis=1), "negative received_time_diff")
    flag(np.any(history["trade_price"] <= 0, axis=1), "non-positive historical trade_price")
    flag(np.any(history["trade_size"] <= 0, axis=1), "non-positive historical trade_size")
    flag(~np.all(np.isin(history["trade_type"], TRADE_TYPES), axis=1), "historical trade_type must be one of 2, 3, 4")
    flag(np.any(history["curve_price"] <= 0, axis=1), "non-positive historical curve_based_price")
    return reasons != "", reasons


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column-oriented table of bond records.

    ``current`` maps the 11 current-trade CSV names to length-n vectors and
    ``history`` maps the internal variable names (see ``HISTORY_VARIABLES``)
    to ``(n, 10)`` arrays ordered oldest to newest. ``extra`` holds appended
    derived features (for example the time-series forecast column).
    """

    current: Mapping[str, np.ndarray]
    history: Mapping[str, np.ndarray]
    extra: Mapping[str, np.ndarray] = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        missing = [c for c in CURRENT_COLUMNS if c not in self.current]
        if missing or set(self.current) - set(CURRENT_COLUMNS):
            raise SchemaError(f"current columns mismatch; missing {missing}")
        if set(self.history) != set(HISTORY_VARIABLES):
            raise SchemaError(f"history variables must be {sorted(HISTORY_VARIABLES)}")
        cur = {c: _frozen(self.current[c]) for c in CURRENT_COLUMNS}
        n = len(cur["id"])
        for c, arr in cur.items():
            if arr.shape != (n,):
                raise SchemaError(f"column '{c}' has shape {arr.shape}, expected ({n},)")
        hist = {v: _frozen(self.history[v]) for v in HISTORY_VARIABLES}
        for v, arr in hist.items():
            if arr.shape != (n, N_LAGS):
                raise SchemaError(f"history '{v}' has shape {arr.shape}, expected ({n}, {N_LAGS})")
        extra = {k: _frozen(v) for k, v in self.extra.items()}
        for k, arr in extra.items():
            if arr.shape != (n,):
                raise SchemaError(f"extra column '{k}' has shape {arr.shape}")
            if k in COLUMNS:
                raise SchemaError(f"extra column '{k}' shadows a schema column")
        object.__setattr__(self, "current", MappingProxyType(cur))
        object.__setattr__(self, "history", MappingProxyType(hist))
        object.__setattr__(self, "extra", MappingProxyType(extra))
        object.__setattr__(self, "meta", MappingProxyType(dict(self.meta)))

    def validate(self) -> None:
        bad, reasons = _validate(self.current, self.history)
        if bad.any():
            i = int(np.argmax(bad))
            raise DataError(str(reasons[i]), row=i + 1)

    def __len__(self) -> int:
        return len(self.current["id"])

    @property
    def n(self) -> int:
        return len(self)

    @property
    def weights(self) -> np.ndarray:
        return self.current["weight"]

    @property
    def target(self) -> np.ndarray:
        return self.current[TARGET_COLUMN]

    @property
    def bond_type_ids(self) -> np.ndarray:
        return self.current["bond_id"]

    def column(self, name: str) -> np.ndarray:
        """Return any schema or extra column by its flat CSV name."""
        if name in self.current:
            return self.current[name]
        if name in self.extra:
            return self.extra[name]
        hist = split_history_name(name)
        if hist is None:
            raise KeyError(name)
        var, lag = hist
        return self.history[var][:, N_LAGS - lag]

    @property
    def column_names(self) -> tuple[str, ...]:
        return COLUMNS + tuple(self.extra)

    def take(self, indices: Sequence[int] | np.ndarray) -> Dataset:
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(
            current={c: a[idx] for c, a in self.current.items()},
            history={v: a[idx] for v, a in self.history.items()},
            extra={k: a[idx] for k, a in self.extra.items()},
            schema_version=self.schema_version,
        )

    def with_column(self, name: str, values: np.ndarray) -> Dataset:
        if name in self.extra:
            raise SchemaError(f"column '{name}' already present")
        extra = dict(self.extra)
        extra[name] = values
        return Dataset(self.current, self.history, extra, self.schema_version, self.meta)

    def record(self, i: int) -> BondRecord:
        kwargs = {attr: self.current[col][i] for col, attr in _RECORD_CURRENT.items()}
        for col in ("id", "bond_id", "is_callable", "trade_type"):
            kwargs[_RECORD_CURRENT[col]] = int(kwargs[_RECORD_CURRENT[col]])
        for col in kwargs:
            if not isinstance(kwargs[col], int):
                kwargs[col] = float(kwargs[col])
        for var, attr in _RECORD_HISTORY.items():
            vals = self.history[var][i, ::-1]
            cast = int if var == "trade_type" else float
            kwargs[attr] = tuple(cast(v) for v in vals)
        return BondRecord(**kwargs)

    def records(self) -> Iterator[BondRecord]:
        for i in range(len(self)):
            yield self.record(i)

    @classmethod
    def from_records(cls, records: Iterable[BondRecord]) -> Dataset:
        recs = list(records)
        current = {
            col: np.array([getattr(r, attr) for r in recs], dtype=float)
            for col, attr in _RECORD_CURRENT.items()
        }
        history = {
            var: np.array([getattr(r, attr)[::-1] for r in recs], dtype=float).reshape(len(recs), N_LAGS)
            for var, attr in _RECORD_HISTORY.items()
        }
        return cls(current, history)

    @classmethod
    def from_columns(cls, columns: Mapping[str, np.ndarray]) -> Dataset:
        """Build from flat CSV-named columns (lag 1 = most recent)."""
        missing = [c for c in COLUMNS if c not in columns]
        if missing:
            raise SchemaError(f"missing columns: {', '.join(missing)}")
        current = {c: np.asarray(columns[c], dtype=float) for c in CURRENT_COLUMNS}
        history = {
            var: np.column_stack([np.asarray(columns[f"{prefix}{k}"], dtype=float) for k in range(N_LAGS, 0, -1)])
            for var, prefix in HISTORY_VARIABLES.items()
        }
        return cls(current, history)

    def to_columns(self) -> dict[str, np.ndarray]:
        return {c: self.column(c) for c in COLUMNS}


# ---------------------------------------------------------------------------
# CSV I/O


def load_csv(path: str | Path, strict: bool = True) -> Dataset:
    """Load and validate a 61-column bond-trade CSV.

    In strict mode the first invalid row raises :class:`DataError` naming its
    1-based data row number. Otherwise invalid rows are dropped; the count and
    row numbers are kept in ``Dataset.meta``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        missing = [c for c in COLUMNS if c not in header]
        extra = [c for c in header if c not in COLUMNS]
        if missing or extra:
            parts = []
            if missing:
                parts.append(f"missing columns: {', '.join(missing)}")
            if extra:
                parts.append(f"unexpected columns: {', '.join(extra)}")
            raise SchemaError("; ".join(parts))
        if len(set(header)) != len(header):
            raise SchemaError("duplicate column names in header")
        order = [header.index(c) for c in COLUMNS]

        values = []
        dropped = []
        for rownum, row in enumerate(reader, start=1):
            if not row:
                continue
            try:
                values.append(_parse_row(row, header, order))
            except DataError as exc:
                if strict:
                    raise DataError(str(exc), row=rownum) from None
                dropped.append(rownum)
                values.append(None)

    kept_rows = [i for i, v in enumerate(values) if v is not None]
    arr = np.array([values[i] for i in kept_rows], dtype=float).reshape(len(kept_rows), len(COLUMNS))
    cols = {c: arr[:, j] for j, c in enumerate(COLUMNS)}
    current = {c: cols[c] for c in CURRENT_COLUMNS}
    history = {
        var: np.column_stack([cols[f"{prefix}{k}"] for k in range(N_LAGS, 0, -1)]).reshape(len(kept_rows), N_LAGS)
        for var, prefix in HISTORY_VARIABLES.items()
    }
    bad, reasons = _validate(current, history)
    if bad.any():
        rownums = np.array([i + 1 for i in kept_rows])
        if strict:
            i = int(np.argmax(bad))
            raise DataError(str(reasons[i]), row=int(rownums[i]))
        dropped.extend(int(r) for r in rownums[bad])
        keep = ~bad
        current = {c: a[keep] for c, a in current.items()}
        history = {v: a[keep] for v, a in history.items()}
    dropped.sort()
    meta = {"source": str(path), "dropped_rows": len(dropped), "dropped_row_numbers": dropped}
    return Dataset(current, history, meta=meta)


def _parse_row(row: list[str], header: list[str], order: list[int]) -> list[float]:
    if len(row) != len(header):
        raise DataError(f"expected {len(header)} fields, found {len(row)}")
    out = []
    for j in order:
        text = row[j].strip()
        if not text:
            raise DataError(f"missing value in '{header[j]}'")
        try:
            out.append(float(text))
        except ValueError:
            raise DataError(f"non-numeric value {text!r} in '{header[j]}'") from None
    return out


_INTEGER_COLUMNS = frozenset({"id", "bond_id", "is_callable"}) | CATEGORICAL_COLUMNS


def write_csv(ds: Dataset, path: str | Path) -> None:
    """Write the 61 schema columns (extras are not written)."""
    path = Path(path)
    cols = ds.to_columns()
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for i in range(len(ds)):
            writer.writerow(
                [str(int(cols[c][i])) if c in _INTEGER_COLUMNS else repr(float(cols[c][i])) for c in COLUMNS]
            )


# ---------------------------------------------------------------------------
# Feature matrices


def is_categorical(name: str) -> bool:
    return name in CATEGORICAL_COLUMNS


def feature_columns(include_row_id: bool = False, include_bond_id: bool = False) -> tuple[str, ...]:
    """Default model inputs: every schema column except the target, ``id`` and ``bond_id``.

    ``bond_id`` is a label, not a quantity; it enters models only when asked
    for (by name, or through the time-series feature).
    """
    drop = {TARGET_COLUMN}
    if not include_row_id:
        drop.add("id")
    if not include_bond_id:
        drop.add("bond_id")
    return tuple(c for c in COLUMNS if c not in drop)


def feature_matrix(
    ds: Dataset,
    encoding_policy: str = "ordinal",
    columns: Sequence[str] | None = None,
    include_row_id: bool = False,
) -> tuple[np.ndarray, list[str]]:
    """Numeric design matrix and its column names.

    Columns appear in schema (CSV) order followed by any extra columns.
    ``columns`` restricts the selection but never reorders it. Under
    ``one_hot`` each trade-type column ``t`` becomes ``t_2`` and ``t_3``
    (trade type 4, the most frequent, is the dropped reference level);
    ``ordinal`` passes the codes through.
    """
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    if encoding_policy not in ("ordinal", "one_hot"):
        raise ValueError(f"unknown encoding policy {encoding_policy!r}")
    available = feature_columns(include_row_id) + tuple(ds.extra)
    if columns is None:
        selected = list(available)
    else:
        wanted = set(columns)
        unknown = wanted - set(ds.column_names)
        if unknown:
            raise SchemaError(f"unknown feature columns: {', '.join(sorted(unknown))}")
        if TARGET_COLUMN in wanted:
            raise SchemaError("the target column cannot be used as a feature")
        selected = [c for c in (COLUMNS + tuple(ds.extra)) if c in wanted]

    blocks, names = [], []
    for c in selected:
        v = ds.column(c)
        if encoding_policy == "one_hot" and c in CATEGORICAL_COLUMNS:
            for level in TRADE_TYPES:
                if level == REFERENCE_TRADE_TYPE:
                    continue
                blocks.append((v == level).astype(float))
                names.append(f"{c}_{level}")
        else:
            blocks.append(v)
            names.append(c)
    return np.column_stack(blocks), names


# ---------------------------------------------------------------------------
# Exploratory statistics


@dataclass(frozen=True)
class ProfileReport:
    correlation_columns: tuple[str, ...]
    correlation_matrix: np.ndarray
    undefined_columns: tuple[str, ...]
    mean_autocorrelation: dict[str, list[float]]
    autocorrelation_counts: dict[str, list[int]]
    categorical_pdfs: dict[str, dict[int, float]]
    n_records: int

    def correlation(self, a: str, b: str) -> float:
        i = self.correlation_columns.index(a)
        j = self.correlation_columns.index(b)
        return float(self.correlation_matrix[i, j])

    def to_dict(self) -> dict:
        corr = [[None if math.isnan(x) else float(x) for x in row] for row in self.correlation_matrix]
        return {
            "n_records": self.n_records,
            "correlation_columns": list(self.correlation_columns),
            "correlation_matrix": corr,
            "undefined_columns": list(self.undefined_columns),
            "mean_autocorrelation": {
                k: [None if math.isnan(x) else x for x in v] for k, v in self.mean_autocorrelation.items()
            },
            "autocorrelation_counts": self.autocorrelation_counts,
            "categorical_pdfs": {k: {str(lv): p for lv, p in v.items()} for k, v in self.categorical_pdfs.items()},
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _lag_correlations(h: np.ndarray, lag: int) -> np.ndarray:
    """Pearson correlation of (x_t, x_{t+lag}) within each row; NaN if undefined."""
    a = h[:, :-lag]
    b = h[:, lag:]
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    den = np.sqrt((a * a).sum(axis=1) * (b * b).sum(axis=1))
    num = (a * b).sum(axis=1)
    out = np.full(len(h), np.nan)
    ok = den > 0
    out[ok] = np.clip(num[ok] / den[ok], -1.0, 1.0)
    return out


def profile(ds: Dataset, max_lag: int = 5) -> ProfileReport:
    """Correlations of continuous columns, mean per-record autocorrelations, categorical PDFs.

    Constant columns get NaN correlation entries (diagonal included) and are
    listed in ``undefined_columns``. Autocorrelations are lag-``k`` Pearson
    correlations within each record's 10-point history, averaged over the
    records for which they are defined.
    """
    if len(ds) == 0:
        raise ValueError("dataset is empty")
    if not 1 <= max_lag <= N_LAGS - 3:
        raise ValueError(f"max_lag must be in [1, {N_LAGS - 3}]")
    names = CONTINUOUS_COLUMNS + tuple(ds.extra)
    X = np.column_stack([ds.column(c) for c in names])
    Xc = X - X.mean(axis=0)
    norms = np.sqrt((Xc * Xc).sum(axis=0))
    scale = np.abs(X).max(axis=0)
    const = norms <= 1e-12 * np.maximum(scale, 1.0) * math.sqrt(len(X))
    Z = np.divide(Xc, norms, out=np.zeros_like(Xc), where=~const)
    corr = np.clip(Z.T @ Z, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    corr[const, :] = np.nan
    corr[:, const] = np.nan

    acf_means, acf_counts = {}, {}
    for var, h in ds.history.items():
        means, counts = [], []
        for lag in range(1, max_lag + 1):
            r = _lag_correlations(h, lag)
            ok = ~np.isnan(r)
            counts.append(int(ok.sum()))
            means.append(float(r[ok].mean()) if ok.any() else float("nan"))
        acf_means[var] = means
        acf_counts[var] = counts

    pdfs = {}
    for col, levels in (("is_callable", (0, 1)), ("trade_type", TRADE_TYPES)):
        v = ds.column(col)
        pdfs[col] = {lv: float(np.mean(v == lv)) for lv in levels}

    return ProfileReport(
        correlation_columns=names,
        correlation_matrix=corr,
        undefined_columns=tuple(n for n, c in zip(names, const) if c),
        mean_autocorrelation=acf_means,
        autocorrelation_counts=acf_counts,
        categorical_pdfs=pdfs,
        n_records=len(ds),
    )


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic desk-scale generator.

    Prices are built as ``curve + spread + execution offset``. The spread is
    an ARMA(1,1) process around a bond-type mean; the current trade continues
    each record's own 10-trade history. The current trade also carries a
    size-dependent dealer markup and weight-dependent noise.
    """

    spread_phi: float = 0.3
    spread_theta: float = 0.5
    spread_sigma: float = 0.8
    group_spread_sd: float = 1.0
    spread_signal: bool = True
    type_offsets: tuple[float, float, float] = (-0.15, 0.15, 0.0)
    markup_amplitude: float = 1.5
    markup_size_scale: float = 40_000.0
    callable_prob: float = 0.11
    trade_type_probs: tuple[float, float, float] = (0.20, 0.36, 0.43)
    curve_level_sd: float = 3.0
    bond_curve_sd: float = 1.0
    walk_step_sd: float = 0.05
    walk_length: int = 1000
    size_median: float = 30_000.0
    size_log_sd: float = 1.0
    weight_log_sd: float = 0.8
    weight_size_loading: float = 0.6
    noise_sd: float = 0.1
    spread_burn_in: int = 30

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping[str, object]) -> SyntheticConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthetic parameters: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)


def generate_synthetic(
    n_records: int,
    n_bond_types: int,
    seed: int,
    config: SyntheticConfig | None = None,
) -> Dataset:
    """Deterministic synthetic dataset with a known ARMA(1,1) spread process."""
    if n_records < 1 or n_bond_types < 1:
        raise ValueError("n_records and n_bond_types must be at least 1")
    cfg = config or SyntheticConfig()
    rng = np.random.default_rng(seed)
    n, T = n_records, N_LAGS + 1  # column T-1 is the current trade

    g = rng.integers(0, n_bond_types, size=n)
    levels = 100.0 + cfg.curve_level_sd * rng.standard_normal(n_bond_types)
    walks = np.cumsum(cfg.walk_step_sd * rng.standard_normal((n_bond_types, cfg.walk_length + T)), axis=1)
    group_mean = cfg.group_spread_sd * rng.standard_normal(n_bond_types)

    anchor = rng.integers(0, cfg.walk_length, size=n)
    bond_offset = cfg.bond_curve_sd * rng.standard_normal(n)
    steps = anchor[:, None] + np.arange(T)[None, :]
    curve = levels[g][:, None] + walks[g[:, None], steps] + bond_offset[:, None]

    if cfg.spread_signal:
        phi, theta, mu = cfg.spread_phi, cfg.spread_theta, group_mean[g]
    else:
        phi, theta, mu = 0.0, 0.0, np.zeros(n)
    L = cfg.spread_burn_in + T
    eps = cfg.spread_sigma * rng.standard_normal((n, L))
    s = np.empty((n, L))
    s[:, 0] = mu + eps[:, 0]
    for t in range(1, L):
        s[:, t] = (1 - phi) * mu + phi * s[:, t - 1] + eps[:, t] + theta * eps[:, t - 1]
    spread = s[:, -T:]

    probs = np.asarray(cfg.trade_type_probs, dtype=float)
    probs = probs / probs.sum()
    types = np.array(TRADE_TYPES)[rng.choice(3, size=(n, T), p=probs)]
    sizes = np.round(cfg.size_median * np.exp(cfg.size_log_sd * rng.standard_normal((n, T))), -2)
    sizes = np.maximum(sizes, 100.0)
    offsets = np.select([types == 2, types == 3], [cfg.type_offsets[0], cfg.type_offsets[1]], cfg.type_offsets[2])
    price = curve + spread + offsets

    side = np.select([types[:, -1] == 2, types[:, -1] == 3], [-1.0, 1.0], 0.0)
    markup = side * cfg.markup_amplitude * np.exp(-sizes[:, -1] / cfg.markup_size_scale)
    z_size = (np.log(sizes[:, -1]) - math.log(cfg.size_median)) / cfg.size_log_sd
    log_w = cfg.weight_size_loading * z_size + math.sqrt(max(1 - cfg.weight_size_loading**2, 0.0)) * rng.standard_normal(n)
    weight = np.exp(cfg.weight_log_sd * log_w)
    noise_scale = np.minimum(cfg.noise_sd / np.sqrt(weight / np.median(weight)), 5 * cfg.noise_sd)
    price[:, -1] += markup + noise_scale * rng.standard_normal(n)

    current = {
        "id": np.arange(1, n + 1, dtype=float),
        "bond_id": (g + 1).astype(float),
        "trade_price": price[:, -1],
        "weight": weight,
        "current_coupon": np.round(rng.uniform(0.5, 8.0, size=n) * 8) / 8,
        "time_to_maturity": rng.uniform(0.25, 30.0, size=n),
        "is_callable": (rng.random(n) < cfg.callable_prob).astype(float),
        "reported_delay": rng.exponential(60.0, size=n),
        "trade_size": sizes[:, -1],
        "trade_type": types[:, -1].astype(float),
        "curve_based_price": curve[:, -1],
    }
    history = {
        "time_diff": rng.exponential(3600.0, size=(n, N_LAGS)),
        "trade_price": price[:, :-1],
        "trade_size": sizes[:, :-1],
        "trade_type": types[:, :-1].astype(float),
        "curve_price": curve[:, :-1],
    }
    ds = Dataset(
        current,
        history,
        meta={"generator": "synthetic", "seed": seed, "n_bond_types": n_bond_types, "config": cfg.to_dict()},
    )
    ds.validate()
    return ds
