"""Hot numeric kernels, each with a numba loop and a pure-numpy twin.

The public names (``monomial_products``, ``lasso_cd``, ``gaussian_kde_eval``)
dispatch on :data:`sngrc._accel.USE_NUMBA`.  Both variants are importable
directly (``*_loop`` / ``*_numpy``) so they can be compared against each other.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

_SQRT_2PI = math.sqrt(2.0 * math.pi)


# Monomial expansion ----------------------------------------------------------

@njit
def monomial_products_loop(lin, idx):
    rows = lin.shape[0]
    k, p = idx.shape
    out = np.empty((rows, k))
    for r in range(rows):
        for j in range(k):
            acc = lin[r, idx[j, 0]]
            for q in range(1, p):
                acc = acc * lin[r, idx[j, q]]
            out[r, j] = acc
    return out


def monomial_products_numpy(lin, idx):
    taken = lin[:, idx]
    out = taken[:, :, 0].copy()
    for q in range(1, idx.shape[1]):
        out *= taken[:, :, q]
    return out


# Lasso coordinate descent (covariance form) ----------------------------------

@njit
def lasso_cd_loop(gram, corr, yy, lam, beta0, max_sweeps, tol, trace):
    """Cyclic coordinate descent on ``0.5 b'Gb - c'b + 0.5 yy + lam |b|_1``."""
    p = gram.shape[0]
    beta = beta0.copy()
    obj = np.full(max_sweeps + 1, np.nan)
    if trace:
        quad = 0.0
        l1 = 0.0
        for a in range(p):
            l1 += abs(beta[a])
            s = 0.0
            for b in range(p):
                s += gram[a, b] * beta[b]
            quad += beta[a] * (0.5 * s - corr[a])
        obj[0] = quad + 0.5 * yy + lam * l1
    sweeps = 0
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            if gram[j, j] <= 0.0:
                continue
            s = corr[j]
            for k in range(p):
                if k != j:
                    s -= gram[j, k] * beta[k]
            if s > lam:
                new = (s - lam) / gram[j, j]
            elif s < -lam:
                new = (s + lam) / gram[j, j]
            else:
                new = 0.0
            delta = abs(new - beta[j])
            if delta > max_delta:
                max_delta = delta
            beta[j] = new
        sweeps = sweep + 1
        if trace:
            quad = 0.0
            l1 = 0.0
            for a in range(p):
                l1 += abs(beta[a])
                s = 0.0
                for b in range(p):
                    s += gram[a, b] * beta[b]
                quad += beta[a] * (0.5 * s - corr[a])
            obj[sweeps] = quad + 0.5 * yy + lam * l1
        if max_delta < tol:
            break
    return beta, sweeps, obj[: sweeps + 1]


def _lasso_objective(gram, corr, yy, lam, beta):
    return float(beta @ (0.5 * (gram @ beta) - corr) + 0.5 * yy + lam * np.abs(beta).sum())


def lasso_cd_numpy(gram, corr, yy, lam, beta0, max_sweeps, tol, trace):
    p = gram.shape[0]
    beta = np.array(beta0, dtype=float)
    diag = np.diag(gram)
    obj = [_lasso_objective(gram, corr, yy, lam, beta)] if trace else []
    sweeps = 0
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            if diag[j] <= 0.0:
                continue
            s = corr[j] - (gram[j] @ beta - diag[j] * beta[j])
            new = np.sign(s) * max(abs(s) - lam, 0.0) / diag[j]
            max_delta = max(max_delta, abs(new - beta[j]))
            beta[j] = new
        sweeps = sweep + 1
        if trace:
            obj.append(_lasso_objective(gram, corr, yy, lam, beta))
        if max_delta < tol:
            break
    if not trace:
        obj = [np.nan]
    return beta, sweeps, np.asarray(obj)


# Gaussian KDE ----------------------------------------------------------------

@njit
def gaussian_kde_eval_loop(samples, grid, h):
    n = samples.shape[0]
    out = np.zeros(grid.shape[0])
    norm = 1.0 / (n * h * math.sqrt(2.0 * math.pi))
    for g in range(grid.shape[0]):
        acc = 0.0
        for s in range(n):
            z = (grid[g] - samples[s]) / h
            acc += math.exp(-0.5 * z * z)
        out[g] = acc * norm
    return out


def gaussian_kde_eval_numpy(samples, grid, h, chunk=2_000_000):
    out = np.empty(grid.shape[0])
    step = max(1, chunk // max(samples.shape[0], 1))
    norm = 1.0 / (samples.shape[0] * h * _SQRT_2PI)
    for start in range(0, grid.shape[0], step):
        z = (grid[start:start + step, None] - samples[None, :]) / h
        out[start:start + step] = np.exp(-0.5 * z * z).sum(axis=1) * norm
    return out


if USE_NUMBA:
    monomial_products = monomial_products_loop
    lasso_cd = lasso_cd_loop
    gaussian_kde_eval = gaussian_kde_eval_loop
else:
    monomial_products = monomial_products_numpy
    lasso_cd = lasso_cd_numpy
    gaussian_kde_eval = gaussian_kde_eval_numpy
