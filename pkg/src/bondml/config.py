"""Experiment configs: flat TOML files with a fixed set of typed keys.

Data source (one of)::

    data_path = "trades.csv"        # strict = true|false
    synthetic_records = 100000      # with synthetic_bond_types, synthetic_seed,
                                    # and optional synthetic_<generator field>

Experiment::

    label = "wls"                   # results-table row name
    method = "wls"                  # see METHOD_KEYS
    seed = 0                        # mandatory; CV instance i uses seed + i
    n_instances = 5
    train_frac = 0.7

Features::

    features = "full" | "subset"    # subset requires columns = [...]
    columns = ["current_coupon", ...]
    encoding = "one_hot" | "ordinal"   # default: ordinal for trees, else one_hot
    ts_augment = false
    ts_samples_per_group = 10
    ts_seed = 0

Method hyperparameters are listed in METHOD_KEYS; ranking keys
(``ranking``, ``target_count``, ``appearance_threshold``, ``drop_fraction``)
are read by ``bondml rank-features``. Any other key is an error.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from bondml.artifact import FeatureSpec
from bondml.dataset import COLUMNS, TARGET_COLUMN, SyntheticConfig, feature_columns


class ConfigError(ValueError):
    pass


TREE_KEYS = {"max_depth", "min_samples_split", "min_samples_leaf", "max_leaves", "ccp_alpha", "m_try"}
METHOD_KEYS: dict[str, set[str]] = {
    "ols": set(),
    "wls": set(),
    "glm": {"link", "weighted"},
    "gamma_glm": {"link", "weighted"},
    "pcr": {"pca_k", "pca_standardize", "pca_select", "weighted", "link"},
    "tree": TREE_KEYS,
    "bagging": TREE_KEYS | {"n_trees"},
    "forest": TREE_KEYS | {"n_trees"},
    "ls_boost": {"n_stages", "J", "shrinkage", "min_samples_leaf"},
    "nn_lm": {"H", "max_epochs", "lam0", "lam_up", "lam_down", "tol", "subsample"},
    "nn_backprop": {"H", "epochs", "learning_rate", "batch_size"},
}
TREE_METHODS = {"tree", "bagging", "forest", "ls_boost"}
# read by rank-features when no method is configured
RANKING_KEYS = {"n_trees", "m_try", "max_depth", "min_samples_leaf", "weighted", "pca_standardize"}

_INT, _FLOAT, _BOOL, _STR, _STRLIST = "int", "float", "bool", "str", "list[str]"
HYPER_TYPES = {
    "link": _STR, "weighted": _BOOL, "pca_k": _INT, "pca_standardize": _BOOL, "pca_select": _STR,
    "max_depth": _INT, "min_samples_split": _INT, "min_samples_leaf": _INT, "max_leaves": _INT,
    "ccp_alpha": _FLOAT, "m_try": _INT, "n_trees": _INT, "n_stages": _INT, "J": _INT, "shrinkage": _FLOAT,
    "H": _INT, "max_epochs": _INT, "lam0": _FLOAT, "lam_up": _FLOAT, "lam_down": _FLOAT, "tol": _FLOAT,
    "subsample": _INT, "epochs": _INT, "learning_rate": _FLOAT, "batch_size": _INT,
}
BASE_TYPES = {
    "label": _STR, "method": _STR, "seed": _INT, "n_instances": _INT, "train_frac": _FLOAT,
    "data_path": _STR, "strict": _BOOL,
    "synthetic_records": _INT, "synthetic_bond_types": _INT, "synthetic_seed": _INT,
    "features": _STR, "columns": _STRLIST, "encoding": _STR,
    "ts_augment": _BOOL, "ts_samples_per_group": _INT, "ts_seed": _INT,
    "ranking": _STR, "target_count": _INT, "appearance_threshold": _FLOAT, "drop_fraction": _FLOAT,
}
_GEN_FIELDS = {f.name: f for f in dataclasses.fields(SyntheticConfig)}


def _check_type(key: str, value: Any, kind: str):
    ok = {
        _INT: isinstance(value, int) and not isinstance(value, bool),
        _FLOAT: isinstance(value, (int, float)) and not isinstance(value, bool),
        _BOOL: isinstance(value, bool),
        _STR: isinstance(value, str),
        _STRLIST: isinstance(value, list) and all(isinstance(v, str) for v in value),
    }.get(kind, True)
    if not ok:
        raise ConfigError(f"key '{key}' expects {kind}, got {value!r}")
    return float(value) if kind == _FLOAT else value


def _generator_field(key: str, value: Any):
    f = _GEN_FIELDS[key]
    default = f.default
    if isinstance(default, bool):
        return _check_type("synthetic_" + key, value, _BOOL)
    if isinstance(default, int):
        return _check_type("synthetic_" + key, value, _INT)
    if isinstance(default, float):
        return _check_type("synthetic_" + key, value, _FLOAT)
    if isinstance(default, tuple):
        if not (isinstance(value, list) and len(value) == len(default)
                and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
            raise ConfigError(f"key 'synthetic_{key}' expects a list of {len(default)} numbers")
        return tuple(float(v) for v in value)
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    label: str = ""
    method: str | None = None
    hyperparameters: dict = field(default_factory=dict)
    n_instances: int = 5
    train_frac: float = 0.70
    data_path: str | None = None
    strict: bool = True
    synthetic_records: int = 100_000
    synthetic_bond_types: int = 50
    synthetic_seed: int = 1
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    features: str = "full"
    columns: tuple[str, ...] | None = None
    encoding: str | None = None
    ts_augment: bool = False
    ts_samples_per_group: int = 10
    ts_seed: int = 0
    ranking: str = "rf"
    target_count: int = 10
    appearance_threshold: float = 0.25
    drop_fraction: float = 0.20
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def replace(self, **kw) -> ExperimentConfig:
        raw = dict(self.raw)
        raw.update(kw)
        return from_dict(raw)

    def feature_spec(self, default_encoding: str | None = None) -> FeatureSpec:
        enc = self.encoding or default_encoding or ("ordinal" if self.method in TREE_METHODS else "one_hot")
        return FeatureSpec(enc, self.columns, self.ts_augment, self.ts_samples_per_group, self.ts_seed)

    def to_toml(self) -> str:
        return dump_toml(self.raw)


def from_dict(d: dict) -> ExperimentConfig:
    d = dict(d)
    kw: dict[str, Any] = {}
    hyper: dict[str, Any] = {}
    gen: dict[str, Any] = {}
    method = d.get("method")
    if method is not None:
        _check_type("method", method, _STR)
        if method not in METHOD_KEYS:
            raise ConfigError(f"unknown method '{method}'; choose from {', '.join(sorted(METHOD_KEYS))}")
    allowed_hyper = METHOD_KEYS[method] if method is not None else RANKING_KEYS
    for key, value in d.items():
        if key in BASE_TYPES:
            kw[key] = _check_type(key, value, BASE_TYPES[key])
        elif key.startswith("synthetic_") and key[len("synthetic_"):] in _GEN_FIELDS:
            gen[key[len("synthetic_"):]] = _generator_field(key[len("synthetic_"):], value)
        elif key in HYPER_TYPES:
            if key not in allowed_hyper:
                what = f"method '{method}'" if method else "a config without a method"
                raise ConfigError(f"key '{key}' does not apply to {what}")
            hyper[key] = _check_type(key, value, HYPER_TYPES[key])
        else:
            raise ConfigError(f"unknown config key '{key}'")
    if "seed" not in kw:
        raise ConfigError("'seed' is mandatory")
    if "data_path" in kw and any(k in d for k in ("synthetic_records", "synthetic_bond_types", "synthetic_seed")):
        raise ConfigError("give either data_path or synthetic_* keys, not both")
    if kw.get("features", "full") not in ("full", "subset"):
        raise ConfigError("features must be 'full' or 'subset'")
    if kw.get("features") == "subset":
        cols = kw.get("columns")
        if not cols:
            raise ConfigError("features = 'subset' needs a non-empty columns list")
        bad = [c for c in cols if c not in COLUMNS or c in (TARGET_COLUMN, "id")]
        if bad:
            raise ConfigError(f"columns not usable as features: {', '.join(bad)}")
        kw["columns"] = tuple(cols)
    elif "columns" in kw:
        raise ConfigError("columns is only valid with features = 'subset'")
    if kw.get("encoding") not in (None, "one_hot", "ordinal"):
        raise ConfigError("encoding must be 'one_hot' or 'ordinal'")
    if kw.get("ranking", "rf") not in ("rf", "pca"):
        raise ConfigError("ranking must be 'rf' or 'pca'")
    if not 0 < kw.get("train_frac", 0.7) < 1:
        raise ConfigError("train_frac must lie in (0, 1)")
    if kw.get("n_instances", 5) < 1:
        raise ConfigError("n_instances must be at least 1")
    if hyper.get("pca_select", "variance") not in ("variance", "target_power"):
        raise ConfigError("pca_select must be 'variance' or 'target_power'")
    if "link" in hyper and hyper["link"] not in ("identity", "inverse", "log"):
        raise ConfigError("link must be 'identity', 'inverse' or 'log'")
    try:
        synthetic = dataclasses.replace(SyntheticConfig(), **gen)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad generator parameters: {exc}") from exc
    kw.setdefault("label", method or "")
    return ExperimentConfig(hyperparameters=hyper, synthetic=synthetic, raw=d, **kw)


def _parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override '{text}' is not KEY=VALUE")
    key, value = text.split("=", 1)
    key = key.strip()
    try:
        return key, tomllib.loads(f"v = {value.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        return key, value.strip()  # bare word: treat as a string


def load(path: str | Path, overrides=()) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            d = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: malformed TOML: {exc}") from exc
    nested = [k for k, v in d.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: tables are not allowed (flat keys only): {', '.join(nested)}")
    for o in overrides:
        k, v = _parse_override(o)
        d[k] = v
    try:
        return from_dict(d)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _toml_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot write {v!r} to TOML")


def dump_toml(d: dict) -> str:
    return "".join(f"{k} = {_toml_value(v)}\n" for k, v in d.items())


def default_grid() -> list[Path]:
    """Shipped experiment configs, in file-name order."""
    base = resources.files("bondml").joinpath("configs")
    return sorted(Path(str(p)) for p in base.iterdir() if p.name.endswith(".toml"))


NINE_FEATURES = ("current_coupon", "time_to_maturity", "is_callable", "reported_delay", "trade_size",
                 "trade_type", "curve_based_price", "trade_price_last1", "curve_based_price_last1")


# ---------------------------------------------------------------------------
# trainers


def make_trainer(cfg: ExperimentConfig):
    """Callable ``Dataset -> ModelArtifact`` for the configured method."""
    from bondml import linear_models as lm
    from bondml import neural as nn
    from bondml import tree_ensembles as te

    h = cfg.hyperparameters
    feats = cfg.feature_spec()
    m = cfg.method
    seed = cfg.seed
    if m in ("ols", "wls"):
        return lambda ds: lm.fit_glm_artifact(ds, m == "wls", "identity", feats)
    if m in ("glm", "gamma_glm"):
        link = h.get("link", "inverse" if m == "gamma_glm" else "identity")
        return lambda ds: lm.fit_glm_artifact(ds, h.get("weighted", True), link, feats)
    if m == "pcr":
        return lambda ds: lm.fit_pcr(ds, h.get("pca_k"), h.get("weighted", True), h.get("pca_standardize", True),
                                     h.get("link", "identity"), feats, h.get("pca_select", "variance"))
    if m in ("tree", "bagging", "forest"):
        controls = te.TreeControls(
            max_depth=h.get("max_depth"), min_samples_split=h.get("min_samples_split", 2),
            min_samples_leaf=h.get("min_samples_leaf", 1), max_leaves=h.get("max_leaves"),
            m_try=h.get("m_try") if m == "tree" else None, ccp_alpha=h.get("ccp_alpha", 0.0))
        if m == "tree":
            return lambda ds: te.fit_tree(ds, controls, feats, seed)

        def forest(ds):
            m_try = h.get("m_try")
            if m == "bagging":
                m_try = None
            elif m_try is None:
                # regression-forest convention: a third of the inputs
                n_inputs = len(feature_columns() if feats.columns is None else feats.columns) + feats.ts_augment
                m_try = max(1, n_inputs // 3)
            return te.fit_forest(ds, h.get("n_trees", 100), m_try, True, controls, seed, feats)

        return forest
    if m == "ls_boost":
        return lambda ds: te.fit_ls_boost(ds, h.get("n_stages", 300), h.get("J", 6), h.get("shrinkage", 0.1), seed,
                                          feats, h.get("min_samples_leaf", 1))
    if m == "nn_lm":
        return lambda ds: nn.train_lm(ds, h.get("H", 20), h.get("max_epochs", 200), h.get("lam0", 1e-3),
                                      h.get("lam_up", 10.0), h.get("lam_down", 10.0), h.get("tol", 1e-8), seed,
                                      h.get("subsample"), feats)
    if m == "nn_backprop":
        return lambda ds: nn.train_backprop(ds, h.get("H", 20), h.get("epochs", 100), h.get("learning_rate", 0.01),
                                            h.get("batch_size", 256), seed, feats)
    raise ConfigError(f"no trainer for method {m!r}")
