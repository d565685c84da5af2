"""Compiled inner loops: CSS recursion and fit, Dickey-Fuller statistics, and
the Monte Carlo drivers used to build the critical-value tables."""

import numpy as np
from numba import njit

BOUND = 1.0 - 1e-6


@njit(cache=True)
def css_residuals(y, c, phi, theta):
    n = y.shape[0]
    eps = np.zeros(n)
    for t in range(1, n):
        eps[t] = y[t] - c - phi * y[t - 1] - theta * eps[t - 1]
    return eps


@njit(cache=True)
def _css_jac(y, c, phi, theta, eps, J):
    # J[t] = d eps_t / d(c, phi, theta); eps_0 = 0 is fixed, so J[0] = 0
    n = y.shape[0]
    J[0, 0] = 0.0
    J[0, 1] = 0.0
    J[0, 2] = 0.0
    s = 0.0
    for t in range(1, n):
        e = y[t] - c - phi * y[t - 1] - theta * eps[t - 1]
        J[t, 0] = -1.0 - theta * J[t - 1, 0]
        J[t, 1] = -y[t - 1] - theta * J[t - 1, 1]
        J[t, 2] = -eps[t - 1] - theta * J[t - 1, 2]
        eps[t] = e
        s += e * e
    return s


@njit(cache=True)
def _objective(y, c, phi, theta):
    n = y.shape[0]
    prev = 0.0
    s = 0.0
    for t in range(1, n):
        e = y[t] - c - phi * y[t - 1] - theta * prev
        s += e * e
        prev = e
    return s


@njit(cache=True)
def _projected_grad_norm(p, g):
    # components pushing against an active bound do not count
    m = abs(g[0])
    for i in (1, 2):
        gi = g[i]
        if p[i] >= BOUND and gi < 0.0:
            gi = 0.0
        if p[i] <= -BOUND and gi > 0.0:
            gi = 0.0
        if abs(gi) > m:
            m = abs(gi)
    return m


@njit(cache=True)
def css_descend(y, c0, phi0, theta0, max_iter, gtol):
    """Damped Gauss-Newton (Levenberg style) from one start.

    Returns (c, phi, theta, objective, start objective, converged, iterations).
    """
    n = y.shape[0]
    eps = np.zeros(n)
    J = np.zeros((n, 3))
    p = np.array([c0, min(max(phi0, -BOUND), BOUND), min(max(theta0, -BOUND), BOUND)])
    f = _css_jac(y, p[0], p[1], p[2], eps, J)
    f_start = f
    scale = 1.0
    for t in range(n):
        scale = max(scale, abs(y[t]))
    lam = 1e-3
    converged = False
    it = 0
    g = np.zeros(3)
    A = np.zeros((3, 3))
    while it < max_iter:
        for i in range(3):
            g[i] = 0.0
            for t in range(n):
                g[i] += J[t, i] * eps[t]
            g[i] *= 2.0
        if _projected_grad_norm(p, g) <= gtol * max(1.0, f) * scale:
            converged = True
            break
        it += 1
        for i in range(3):
            for j in range(3):
                s = 0.0
                for t in range(n):
                    s += J[t, i] * J[t, j]
                A[i, j] = s
        # parameters held at a bound by an outward gradient stay fixed this step
        active = np.zeros(3, np.bool_)
        for i in (1, 2):
            active[i] = (p[i] >= BOUND and g[i] < 0.0) or (p[i] <= -BOUND and g[i] > 0.0)
        improved = False
        for _ in range(60):
            M = A.copy()
            rhs = -0.5 * g
            for i in range(3):
                M[i, i] += lam * (A[i, i] + 1e-12)
            for i in range(3):
                if active[i]:
                    for j in range(3):
                        M[i, j] = 0.0
                        M[j, i] = 0.0
                    M[i, i] = 1.0
                    rhs[i] = 0.0
            step = np.linalg.solve(M, rhs)
            q = p + step
            q[1] = min(max(q[1], -BOUND), BOUND)
            q[2] = min(max(q[2], -BOUND), BOUND)
            fq = _objective(y, q[0], q[1], q[2])
            if fq < f:
                p = q
                lam = max(lam / 10.0, 1e-12)
                improved = True
                break
            lam *= 10.0
            if lam > 1e16:
                break
        if not improved:
            # no decrease available along any damped direction: stationary to rounding
            converged = _projected_grad_norm(p, g) <= 1e-6 * max(1.0, f) * scale
            break
        f = _css_jac(y, p[0], p[1], p[2], eps, J)
    return p[0], p[1], p[2], f, f_start, converged, it


@njit(cache=True)
def forecast_batch(D, c, phi, theta):
    """One-step forecasts for each row of D (oldest -> newest) with per-row parameters."""
    m, n = D.shape
    out = np.empty(m)
    for i in range(m):
        prev = 0.0
        for t in range(1, n):
            prev = D[i, t] - c[i] - phi[i] * D[i, t - 1] - theta[i] * prev
        out[i] = c[i] + phi[i] * D[i, n - 1] + theta[i] * prev
    return out


@njit(cache=True)
def df_stat0(u):
    """Dickey-Fuller t statistic without deterministic terms or lagged differences."""
    n = u.shape[0]
    sxx = 0.0
    sxy = 0.0
    syy = 0.0
    for t in range(1, n):
        x = u[t - 1]
        d = u[t] - x
        sxx += x * x
        sxy += x * d
        syy += d * d
    if sxx <= 0.0:
        return np.nan
    rho = sxy / sxx
    rss = syy - rho * sxy
    if rss < 0.0:
        rss = 0.0
    s2 = rss / (n - 2)
    if s2 <= 0.0:
        return np.nan
    return rho / np.sqrt(s2 / sxx)


@njit(cache=True)
def simulate_df(n, reps, seed):
    np.random.seed(seed)
    out = np.empty(reps)
    u = np.empty(n)
    for r in range(reps):
        acc = 0.0
        for t in range(n):
            acc += np.random.standard_normal()
            u[t] = acc
        out[r] = df_stat0(u)
    return out


@njit(cache=True)
def eg_residuals(y, z):
    n = y.shape[0]
    my = 0.0
    mz = 0.0
    for t in range(n):
        my += y[t]
        mz += z[t]
    my /= n
    mz /= n
    szz = 0.0
    szy = 0.0
    for t in range(n):
        szz += (z[t] - mz) * (z[t] - mz)
        szy += (z[t] - mz) * (y[t] - my)
    beta = szy / szz
    alpha = my - beta * mz
    u = np.empty(n)
    for t in range(n):
        u[t] = y[t] - alpha - beta * z[t]
    return alpha, beta, u


@njit(cache=True)
def simulate_eg(n, reps, seed):
    np.random.seed(seed)
    out = np.empty(reps)
    y = np.empty(n)
    z = np.empty(n)
    for r in range(reps):
        ay = 0.0
        az = 0.0
        for t in range(n):
            ay += np.random.standard_normal()
            az += np.random.standard_normal()
            y[t] = ay
            z[t] = az
        _, _, u = eg_residuals(y, z)
        out[r] = df_stat0(u)
    return out
