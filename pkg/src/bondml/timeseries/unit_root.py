"""Dickey-Fuller unit-root test and the two-step Engle-Granger cointegration test.

Neither test includes deterministic terms in the unit-root regression. The
null quantiles come from the CSV tables in ``data/`` (regenerated by
``scripts/simulate_critical_values.py``) and are interpolated linearly in
1/n between the tabulated sample sizes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from bondml.errors import NumericalError
from bondml.timeseries._kernels import eg_residuals

PROBS = [0.001, 0.005, 0.01, 0.025, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50,
         0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95, 0.975, 0.99, 0.995, 0.999]
SIZES = [10, 15, 25, 50, 100, 250, 500, 1000, 2000]
LEVELS = (0.01, 0.05, 0.10)


@dataclass(frozen=True)
class CriticalTable:
    name: str
    inv_n: np.ndarray  # ascending 1/n, 0 for the asymptotic row
    probs: np.ndarray
    quantiles: np.ndarray  # (len(inv_n), len(probs))

    def quantiles_at(self, n: int) -> np.ndarray:
        x = 1.0 / n
        return np.array([np.interp(x, self.inv_n, self.quantiles[:, j]) for j in range(len(self.probs))])

    def critical_value(self, n: int, level: float) -> float:
        return float(np.interp(level, self.probs, self.quantiles_at(n)))

    def p_value(self, statistic: float, n: int) -> float:
        """Left-tail probability; clipped to the ends of the probability grid."""
        return float(np.interp(statistic, self.quantiles_at(n), self.probs))


@lru_cache(maxsize=None)
def load_table(kind: str) -> CriticalTable:
    fname = {"df": "df_critical.csv", "eg": "eg_critical.csv"}[kind]
    text = resources.files("bondml.timeseries").joinpath("data", fname).read_text()
    rows = [r for r in csv.reader(line for line in text.splitlines() if not line.startswith("#"))]
    probs = np.array([float(p) for p in rows[0][1:]])
    inv, q = [], []
    for r in rows[1:]:
        inv.append(0.0 if r[0] == "inf" else 1.0 / float(r[0]))
        q.append([float(v) for v in r[1:]])
    order = np.argsort(inv)
    return CriticalTable(kind, np.array(inv)[order], probs, np.array(q)[order])


@dataclass(frozen=True)
class AdfResult:
    statistic: float
    p_value: float
    reject: bool
    lags: int
    n: int
    level: float
    critical_value: float


def _df_regression(u: np.ndarray, lags: int) -> float:
    du = np.diff(u)
    n_obs = len(du) - lags
    cols = [u[lags:-1]] + [du[lags - j:len(du) - j] for j in range(1, lags + 1)]
    Z = np.column_stack(cols)
    dy = du[lags:]
    p = Z.shape[1]
    if n_obs - p < 1:
        raise NumericalError(f"degenerate regression: {n_obs} observations for {p} coefficients")
    coef, _, rank, _ = np.linalg.lstsq(Z, dy, rcond=None)
    if rank < p:
        raise NumericalError("degenerate regression: regressors are collinear")
    resid = dy - Z @ coef
    s2 = float(resid @ resid) / (n_obs - p)
    if not s2 > 0:
        raise NumericalError("degenerate regression: zero residual variance")
    cov = s2 * np.linalg.inv(Z.T @ Z)
    return float(coef[0] / math.sqrt(cov[0, 0]))


def _check_level(level: float) -> None:
    if not 0.001 <= level <= 0.999:
        raise ValueError("level must lie in [0.001, 0.999]")


def adf_test(series, lags: int = 0, level: float = 0.05) -> AdfResult:
    """Augmented Dickey-Fuller test (no constant, no trend) on ``series``."""
    u = np.asarray(series, dtype=float)
    if lags < 0:
        raise ValueError("lags must be non-negative")
    if u.ndim != 1 or len(u) < lags + 4:
        raise ValueError(f"series needs at least lags + 4 = {lags + 4} points")
    _check_level(level)
    stat = _df_regression(u, lags)
    tab = load_table("df")
    cv = tab.critical_value(len(u), level)
    return AdfResult(stat, tab.p_value(stat, len(u)), bool(stat < cv), lags, len(u), level, cv)


@dataclass(frozen=True)
class EgTestResult:
    beta: float
    intercept: float
    statistic: float
    p_value: float
    reject: bool
    lags: int
    n: int
    level: float
    critical_value: float
    degenerate: bool = False
    residuals: np.ndarray = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("residuals")
        return d


def engle_granger(y, z, lags: int = 0, level: float = 0.05) -> EgTestResult:
    """Regress y on z with an intercept, then unit-root test the residuals.

    Identical series (zero residuals) cannot be tested; the result is then
    flagged ``degenerate`` with a NaN statistic and is never a rejection.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    if y.shape != z.shape or y.ndim != 1:
        raise ValueError("y and z must be 1-d series of equal length")
    if len(y) < 8:
        raise ValueError("series need at least 8 points")
    if lags < 0 or len(y) < lags + 4:
        raise ValueError("lags must be in [0, n - 4]")
    _check_level(level)
    if np.all(z == z[0]):
        raise ValueError("z is constant; the cointegrating regression is undefined")
    alpha, beta, u = eg_residuals(y, z)
    tab = load_table("eg")
    cv = tab.critical_value(len(y), level)
    scale = float(np.sum((y - y.mean()) ** 2))
    if float(u @ u) <= 1e-24 * max(scale, 1e-300):
        return EgTestResult(float(beta), float(alpha), float("nan"), float("nan"), False, lags, len(y), level, cv,
                            True, u)
    stat = _df_regression(u, lags)
    return EgTestResult(float(beta), float(alpha), stat, tab.p_value(stat, len(y)), bool(stat < cv), lags, len(y),
                        level, cv, False, u)
