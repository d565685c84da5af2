"""Regenerate the Dickey-Fuller and Engle-Granger critical-value tables.

Both statistics are the no-deterministic-term t ratio on the lagged level,
computed on a Gaussian random walk (DF) or on the OLS-with-intercept residuals
of one random walk regressed on an independent one (EG). For each sample size
the empirical quantiles of the null distribution are written on a fixed
probability grid; the row ``inf`` is the intercept of a quantile response
surface q(n) = q_inf + a/n + b/n^2 fitted to the sizes n >= 50.

    python scripts/simulate_critical_values.py --reps 1000000
"""

import argparse
import datetime
import time
from pathlib import Path

import numba
import numpy as np

from bondml.timeseries._kernels import simulate_df, simulate_eg
from bondml.timeseries.unit_root import PROBS, SIZES

OUT = Path(__file__).resolve().parents[1] / "src" / "bondml" / "timeseries" / "data"


def table(sim, reps, seed):
    rows = {}
    for i, n in enumerate(SIZES):
        t0 = time.perf_counter()
        stats = sim(n, reps, seed + 1000 * i)
        stats = stats[np.isfinite(stats)]
        rows[n] = np.quantile(stats, PROBS)
        print(f"  n={n:5d}  {time.perf_counter() - t0:6.1f}s  5%={rows[n][PROBS.index(0.05)]:.4f}", flush=True)
    big = [n for n in SIZES if n >= 50]
    inv = np.array([1.0 / n for n in big])
    A = np.column_stack([np.ones_like(inv), inv, inv**2])
    Q = np.array([rows[n] for n in big])
    coef, *_ = np.linalg.lstsq(A, Q, rcond=None)
    return rows, coef[0]


def write(path, name, rows, q_inf, reps, seed):
    with open(path, "w") as fh:
        fh.write(f"# {name} null quantiles of the lagged-level t ratio\n")
        fh.write(f"# generated by scripts/simulate_critical_values.py on {datetime.date.today().isoformat()}\n")
        fh.write(f"# replications per size: {reps}; seed: {seed}; numba {numba.__version__}, numpy {np.__version__}\n")
        fh.write("# row 'inf': intercept of q(n) = q_inf + a/n + b/n^2 fitted over n >= 50\n")
        fh.write("n," + ",".join(f"{p:g}" for p in PROBS) + "\n")
        for n, q in rows.items():
            fh.write(f"{n}," + ",".join(f"{v:.5f}" for v in q) + "\n")
        fh.write("inf," + ",".join(f"{v:.5f}" for v in q_inf) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--reps", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--out", type=Path, default=OUT)
    ap.add_argument("--only", choices=("df", "eg"), help="regenerate a single table")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, sim, fname in (("Dickey-Fuller", simulate_df, "df_critical.csv"),
                             ("Engle-Granger (2 variables)", simulate_eg, "eg_critical.csv")):
        if args.only and not fname.startswith(args.only):
            continue
        print(name)
        rows, q_inf = table(sim, args.reps, args.seed)
        write(args.out / fname, name, rows, q_inf, args.reps, args.seed)


if __name__ == "__main__":
    main()
