"""Sample ACF and PACF."""

import numpy as np


def _check(series, max_lag: int) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if max_lag < 0:
        raise ValueError("max_lag must be non-negative")
    if len(x) <= max_lag + 1:
        raise ValueError(f"series of length {len(x)} is too short for max_lag={max_lag}")
    return x


def acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelations r_0..r_max_lag (biased, full-sample denominator)."""
    x = _check(series, max_lag)
    d = x - x.mean()
    c0 = float(d @ d)
    if c0 <= 0.0:
        raise ValueError("series has zero variance")
    n = len(x)
    r = np.array([float(d[: n - k] @ d[k:]) / c0 for k in range(max_lag + 1)])
    return np.clip(r, -1.0, 1.0)


def pacf(series, max_lag: int) -> np.ndarray:
    """Partial autocorrelations by the Durbin-Levinson recursion; entry 0 is 1."""
    r = acf(series, max_lag)
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    if max_lag == 0:
        return out
    phi = np.zeros(max_lag + 1)
    phi[1] = r[1]
    out[1] = r[1]
    v = 1.0 - r[1] ** 2
    for k in range(2, max_lag + 1):
        if v <= 0.0:
            out[k:] = 0.0
            break
        a = (r[k] - phi[1:k] @ r[k - 1:0:-1]) / v
        a = float(np.clip(a, -1.0, 1.0))
        phi[1:k] = phi[1:k] - a * phi[k - 1:0:-1]
        phi[k] = a
        out[k] = a
        v *= 1.0 - a * a
    return out
