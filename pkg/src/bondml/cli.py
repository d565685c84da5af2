"""Command-line experiment runner.

    bondml generate       write a synthetic dataset and its provenance sidecar
    bondml profile        exploratory statistics of a dataset
    bondml run            cross-validate one configured method, append to results.csv
    bondml rank-features  RF recursive elimination or PCA component ranking
    bondml build-ts-table precompute the per-bond-type ARMA(1,1) table
    bondml compare        significance of the test-WEPS difference between two rows
    bondml report         results table and plot-data files

Configs are flat TOML files; see ``bondml.config`` for the keys. Exit codes:
0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import fcntl
import hashlib
import json
import logging
import math
import os
import sys
from pathlib import Path

from bondml import config as cfgmod
from bondml.config import ConfigError, ExperimentConfig
from bondml.dataset import Dataset, generate_synthetic, load_csv, profile, write_csv
from bondml.errors import DataError, NumericalError, SchemaError
from bondml.evaluation import CvResult, run_cv, significance_interval, weight_balanced_split
from bondml.timeseries import build_group_arma_table

logger = logging.getLogger("bondml")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUTPUT_ENV = "BONDML_OUTPUT_ROOT"
RESULTS_FILE = "results.csv"
RESULT_COLUMNS = ("method", "train_weps", "test_weps", "time_s",
                  "n_train", "n_test", "n_failed", "seed", "run_dir",
                  "instance_train_weps", "instance_test_weps", "instance_time_s")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def output_root(args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get(OUTPUT_ENV, "bondml_out"))


def load_config(args) -> ExperimentConfig:
    if not args.config:
        raise UsageError("--config is required")
    cfg = cfgmod.load(args.config, overrides=args.set or [])
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def load_data(cfg: ExperimentConfig) -> Dataset:
    if cfg.data_path:
        return load_csv(cfg.data_path, strict=cfg.strict)
    return generate_synthetic(cfg.synthetic_records, cfg.synthetic_bond_types, cfg.synthetic_seed, cfg.synthetic)


def _fmt(x) -> str:
    return repr(float(x))


def _join(values) -> str:
    return ";".join(_fmt(v) for v in values)


def append_result(root: Path, cfg: ExperimentConfig, res: CvResult, run_dir: Path) -> None:
    """Append one row under an exclusive advisory lock; the header is written once."""
    root.mkdir(parents=True, exist_ok=True)
    path = root / RESULTS_FILE
    row = {
        "method": cfg.label,
        "train_weps": _fmt(res.mean_train_weps),
        "test_weps": _fmt(res.mean_test_weps),
        "time_s": _fmt(res.mean_fit_seconds),
        "n_train": res.n_train,
        "n_test": res.n_test,
        "n_failed": res.n_failed,
        "seed": cfg.seed,
        "run_dir": os.path.relpath(run_dir, root),
        "instance_train_weps": _join(r.train_weps for r in res.instances),
        "instance_test_weps": _join(r.test_weps for r in res.instances),
        "instance_time_s": _join(r.fit_seconds for r in res.instances),
    }
    with open(path, "a+", newline="") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            fh.seek(0, os.SEEK_END)
            wr = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
            if fh.tell() == 0:
                wr.writeheader()
            wr.writerow(row)
            fh.flush()
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def read_results(path: Path) -> list[dict]:
    """Rows of a results table; a later row with the same method label replaces an earlier one."""
    if not path.exists():
        raise DataError(f"no results table at {path}")
    with open(path, newline="") as fh:
        fcntl.flock(fh, fcntl.LOCK_SH)
        rows = list(csv.DictReader(fh))
        fcntl.flock(fh, fcntl.LOCK_UN)
    latest = {}
    for r in rows:
        latest[r["method"]] = r
    return list(latest.values())


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    cfg = load_config(args)
    root = output_root(args)
    root.mkdir(parents=True, exist_ok=True)
    name = cfg.label or f"synthetic_{cfg.synthetic_records}_{cfg.synthetic_bond_types}_{cfg.synthetic_seed}"
    path = root / f"{name}.csv"
    ds = generate_synthetic(cfg.synthetic_records, cfg.synthetic_bond_types, cfg.synthetic_seed, cfg.synthetic)
    write_csv(ds, path)
    sidecar = {
        "file": path.name,
        "sha256": _sha256(path),
        "n_records": cfg.synthetic_records,
        "n_bond_types": cfg.synthetic_bond_types,
        "seed": cfg.synthetic_seed,
        "generator": cfg.synthetic.to_dict(),
        "schema_version": ds.schema_version,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    print(path)
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg = load_config(args)
    ds = load_data(cfg)
    rep = profile(ds, max_lag=args.max_lag)
    root = output_root(args)
    root.mkdir(parents=True, exist_ok=True)
    out = root / f"profile_{cfg.label or 'data'}.json"
    rep.to_json(out)
    print(f"{rep.n_records} records; mean lag-1 autocorrelation "
          + ", ".join(f"{k}={v[0]:.3f}" for k, v in rep.mean_autocorrelation.items()))
    print(out)
    return EXIT_OK


def _run_one(cfg: ExperimentConfig, root: Path, threads: int) -> int:
    ds = load_data(cfg)
    trainer = cfgmod.make_trainer(cfg)
    res = run_cv(ds, trainer, cfg.n_instances, cfg.seed, cfg.train_frac, cfg.label, cfg.hyperparameters,
                 n_jobs=threads, keep_artifacts=True)
    run_dir = root / "runs" / f"{cfg.label}__seed{cfg.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.toml").write_text(cfg.to_toml())
    (run_dir / "cv_result.json").write_text(res.to_json() + "\n")
    art = res.artifacts[0] if res.artifacts else None
    if art is not None:
        (run_dir / "artifact_instance0.json").write_text(art.to_json() + "\n")
        if hasattr(art.model, "write_log_csv"):
            art.model.write_log_csv(run_dir / "training_log_instance0.csv")
    append_result(root, cfg, res, run_dir)
    for r in res.instances:
        if r.failed:
            print(f"instance {r.index} (seed {r.seed}) failed: {r.error}", file=sys.stderr)
    print(f"{cfg.label}: train {res.mean_train_weps:.6f}  test {res.mean_test_weps:.6f}  "
          f"time {res.mean_fit_seconds:.2f}s  ({len(res.completed)}/{len(res.instances)} instances)")
    if res.n_failed == len(res.instances):
        errors = " ".join(r.error or "" for r in res.instances)
        return EXIT_NUMERIC if ("NumericalError" in errors or "RankDeficient" in errors) else EXIT_DATA
    return EXIT_OK


def cmd_run(args) -> int:
    root = output_root(args)
    if args.grid:
        paths = cfgmod.default_grid()
        if args.config:
            raise UsageError("--grid and --config are exclusive")
    elif args.config:
        paths = [args.config]
    else:
        raise UsageError("give --config PATH or --grid")
    status = EXIT_OK
    for p in paths:
        cfg = cfgmod.load(p, overrides=args.set or [])
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        if cfg.method is None:
            raise ConfigError(f"{p}: 'method' is required for run")
        status = max(status, _run_one(cfg, root, args.threads))
    return status


def cmd_rank_features(args) -> int:
    from bondml.linear_models import rank_components_by_target_power
    from bondml.tree_ensembles import TreeControls, rf_feature_ranking

    cfg = load_config(args)
    ds = load_data(cfg)
    split = weight_balanced_split(ds, cfg.train_frac, cfg.seed)
    train = ds.take(split.train_indices)
    root = output_root(args)
    root.mkdir(parents=True, exist_ok=True)
    h = cfg.hyperparameters
    if cfg.ranking == "pca":
        ranked = rank_components_by_target_power(train, weighted=h.get("weighted", True),
                                                 standardize=h.get("pca_standardize", True),
                                                 features=cfg.feature_spec())
        out = {"ranking": "pca", "components": [{"component": j + 1, "weps": e} for j, e in ranked]}
        for j, e in ranked[:10]:
            print(f"pc{j + 1:<4d} {e:.6f}")
    else:
        controls = TreeControls(max_depth=h.get("max_depth", 6), min_samples_leaf=h.get("min_samples_leaf", 5))
        fr = rf_feature_ranking(train, cfg.target_count, cfg.appearance_threshold, cfg.drop_fraction,
                                h.get("n_trees", 50), h.get("m_try"), controls, cfg.seed, cfg.feature_spec("ordinal"))
        out = {"ranking": "rf", **fr.to_dict()}
        for name, score in fr.ranking:
            print(f"{name:32s} {score:.6f}")
    path = root / f"ranking_{cfg.label or cfg.ranking}__seed{cfg.seed}.json"
    path.write_text(json.dumps(out, indent=1, allow_nan=True) + "\n")
    print(path)
    return EXIT_OK


def cmd_build_ts_table(args) -> int:
    cfg = load_config(args)
    ds = load_data(cfg)
    # only training rows ever feed the table
    split = weight_balanced_split(ds, cfg.train_frac, cfg.seed)
    table = build_group_arma_table(ds.take(split.train_indices), cfg.ts_samples_per_group, cfg.ts_seed)
    root = output_root(args)
    root.mkdir(parents=True, exist_ok=True)
    path = root / f"ts_table_{cfg.label or 'data'}__seed{cfg.seed}.json"
    path.write_text(table.to_json() + "\n")
    m = table.meta
    print(f"{m['n_groups']} bond types, {m['n_converged']}/{m['n_fits']} fits converged, {m['n_fallback']} fallbacks")
    print(path)
    return EXIT_OK


def compare_rows(a: dict, b: dict):
    if int(a["n_test"]) != int(b["n_test"]):
        raise DataError(f"rows '{a['method']}' and '{b['method']}' were tested on different record counts "
                        f"({a['n_test']} vs {b['n_test']})")
    return significance_interval(float(a["test_weps"]), float(b["test_weps"]), int(a["n_test"]))


def cmd_compare(args) -> int:
    table = Path(args.table) if args.table else output_root(args) / RESULTS_FILE
    rows = {r["method"]: r for r in read_results(table)}
    for name in (args.row_a, args.row_b):
        if name not in rows:
            raise DataError(f"no row '{name}' in {table}")
    s = compare_rows(rows[args.row_a], rows[args.row_b])
    verdict = "significant" if s.significant else "not significant"
    print(f"d = {s.d:+.6f}  95% interval [{s.lo:+.6f}, {s.hi:+.6f}]  n = {s.n}  -> {verdict}")
    if s.outside_unit_interval:
        print("warning: an error rate lies outside [0, 1]; the variance formula does not apply", file=sys.stderr)
    return EXIT_OK


def _config_of(root: Path, row: dict) -> ExperimentConfig | None:
    p = root / row["run_dir"] / "config.toml"
    return cfgmod.load(p) if p.exists() else None


def cmd_report(args) -> int:
    root = output_root(args)
    rows = read_results(root / RESULTS_FILE)
    if not rows:
        raise DataError(f"{root / RESULTS_FILE} has no rows")
    rep = root / "report"
    rep.mkdir(parents=True, exist_ok=True)
    n_inst = max(len(r["instance_test_weps"].split(";")) for r in rows)
    header = ["method", "train_weps", "test_weps", "time_s"] + [f"test_weps_{i}" for i in range(n_inst)]
    table = []
    for r in rows:
        inst = r["instance_test_weps"].split(";")
        table.append([r["method"], float(r["train_weps"]), float(r["test_weps"]), float(r["time_s"])]
                     + [float(v) for v in inst] + [math.nan] * (n_inst - len(inst)))
    with open(rep / "results_table.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for t in table:
            wr.writerow([t[0]] + [repr(v) for v in t[1:]])
    width = max(len(h) for h in [r[0] for r in table] + ["method"])
    lines = [f"{'method':<{width}}  {'train WEPS':>11}  {'test WEPS':>11}  {'time (s)':>9}"]
    for t in table:
        lines.append(f"{t[0]:<{width}}  {t[1]:11.5f}  {t[2]:11.5f}  {t[3]:9.2f}")
    (rep / "results_table.txt").write_text("\n".join(lines) + "\n")

    curve = []
    for r in rows:
        cfg = _config_of(root, r)
        if cfg is not None and cfg.method == "pcr" and cfg.hyperparameters.get("pca_select", "variance") == "variance":
            k = cfg.hyperparameters.get("pca_k")
            if k is not None:
                curve.append((int(k), r["method"], float(r["train_weps"]), float(r["test_weps"])))
    curve.sort()
    with open(rep / "pca_curve.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["k", "method", "train_weps", "test_weps"])
        for k, m, a, b in curve:
            wr.writerow([k, m, repr(a), repr(b)])
    with open(rep / "error_vs_time.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["method", "time_s", "test_weps", "train_weps"])
        for t in table:
            wr.writerow([t[0], repr(t[3]), repr(t[2]), repr(t[1])])
    print("\n".join(lines))
    print(rep)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bondml", description="Bond trade-price benchmark harness.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="flat TOML experiment config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (TOML value syntax)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help=f"output root (default ${OUTPUT_ENV} or ./bondml_out)")
        sp.add_argument("--threads", type=int, default=1, help="parallel CV instances")

    common(sub.add_parser("generate", help="write a synthetic dataset"))
    sp = sub.add_parser("profile", help="dataset statistics")
    common(sp)
    sp.add_argument("--max-lag", type=int, default=5)
    sp = sub.add_parser("run", help="cross-validate a configured method")
    common(sp, config_required=False)
    sp.add_argument("--grid", action="store_true", help="run every shipped default config")
    common(sub.add_parser("rank-features", help="feature or component ranking"))
    common(sub.add_parser("build-ts-table", help="precompute the bond-type ARMA table"))
    sp = sub.add_parser("compare", help="significance of a test-WEPS difference")
    sp.add_argument("row_a")
    sp.add_argument("row_b")
    sp.add_argument("--table", help="results CSV (default <out>/results.csv)")
    sp.add_argument("--out")
    sp = sub.add_parser("report", help="results table and plot data")
    sp.add_argument("--out")
    return p


COMMANDS = {
    "generate": cmd_generate,
    "profile": cmd_profile,
    "run": cmd_run,
    "rank-features": cmd_rank_features,
    "build-ts-table": cmd_build_ts_table,
    "compare": cmd_compare,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        print("bondml: error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"bondml: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SchemaError, DataError, FileNotFoundError) as exc:
        print(f"bondml: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"bondml: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
