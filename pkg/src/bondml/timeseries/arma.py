"""ARMA(1,1) by conditional sum of squares, and one-step forecasting.

Model: y_t = c + phi*y_{t-1} + theta*eps_{t-1} + eps_t, with eps_1 = 0. The
objective is sum_{t>=2} eps_t^2, minimised by damped Gauss-Newton inside the
box |phi|, |theta| <= 1 - 1e-6 from a 3x3 grid of starting points.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from bondml.timeseries._kernels import BOUND, css_descend, css_residuals

START_GRID = (-0.5, 0.0, 0.5)


@dataclass(frozen=True)
class ArmaParams:
    c: float
    phi: float
    theta: float
    sigma2: float = float("nan")
    converged: bool = True
    objective: float = float("nan")
    n: int = 0

    def __post_init__(self):
        if not (abs(self.phi) <= BOUND and abs(self.theta) <= BOUND):
            raise ValueError(f"phi={self.phi}, theta={self.theta} outside the stationary/invertible box")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ArmaParams:
        return cls(**d)


def _series(series, min_len: int) -> np.ndarray:
    y = np.ascontiguousarray(series, dtype=float)
    if y.ndim != 1 or len(y) < min_len:
        raise ValueError(f"series must be 1-d with at least {min_len} points")
    if not np.all(np.isfinite(y)):
        raise ValueError("series contains non-finite values")
    return y


def css_objective(series, c: float, phi: float, theta: float) -> float:
    e = css_residuals(_series(series, 1), c, phi, theta)
    return float(e @ e)


def fit_arma11(series, max_iter: int = 200, gtol: float = 1e-8) -> ArmaParams:
    """Multi-start CSS fit. The returned objective never exceeds any start's.

    ``converged`` reports whether the winning run met the (projected)
    gradient tolerance; when no run does, the best candidate is still
    returned with ``converged=False``.
    """
    y = _series(series, 5)
    mean = float(y.mean())
    runs = []
    for phi0, theta0 in itertools.product(START_GRID, START_GRID):
        runs.append(css_descend(y, mean * (1 - phi0), phi0, theta0, max_iter, gtol))
    best = min(runs, key=lambda r: r[3])
    c, phi, theta, f, _, conv, _ = best
    if not conv:
        tol = 1e-10 * max(f, 1e-300)
        conv = any(r[5] and r[3] <= f + tol for r in runs)
    return ArmaParams(float(c), float(phi), float(theta), f / (len(y) - 1), bool(conv), float(f), len(y))


def forecast_arma11(p: ArmaParams, series) -> float:
    """One-step forecast c + phi*y_last + theta*eps_last, eps rebuilt by the CSS recursion."""
    y = _series(series, 1)
    e = css_residuals(y, p.c, p.phi, p.theta)
    return float(p.c + p.phi * y[-1] + p.theta * e[-1])
