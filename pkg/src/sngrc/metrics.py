"""Tracking-error RMSE, Gaussian kernel density estimates and sweep aggregation."""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from . import kernels
from .errors import BadInput

KDE_GRID_POINTS = 512
KDE_GRID_PAD = 3.0


@dataclass(frozen=True)
class RmseReport:
    total: float
    per_component: np.ndarray
    window: tuple


def rmse_of(errors):
    e = np.atleast_2d(np.asarray(errors, dtype=float))
    if e.size == 0:
        raise BadInput("empty error window")
    return float(math.sqrt(np.mean(e * e))), np.sqrt(np.mean(e * e, axis=0))


def rmse(log, window=None):
    """RMSE of ``log.e`` over steps ``window = (start, stop)`` (default: every record)."""
    n = log.n_records
    start, stop = (0, n) if window is None else window
    if not 0 <= start < stop <= n:
        raise BadInput(f"window {window} is empty or outside the log's {n} records")
    total, per = rmse_of(log.e[start:stop])
    return RmseReport(total, per, (int(start), int(stop)))


# Kernel density estimation -----------------------------------------------------

@dataclass(frozen=True)
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    n_samples: int
    degenerate: bool = False

    def integral(self):
        return float(trapezoid(self.density, self.grid))

    def cdf(self):
        """Cumulative trapezoid integral, normalized to end at 1."""
        d, x = self.density, self.grid
        c = np.concatenate([[0.0], np.cumsum(0.5 * (d[1:] + d[:-1]) * np.diff(x))])
        return c / c[-1] if c[-1] > 0 else c

    def quantile(self, q):
        c = self.cdf()
        return float(np.interp(q, c, self.grid))

    def iqr(self):
        return self.quantile(0.75) - self.quantile(0.25)


def silverman_bandwidth(samples):
    """``0.9 min(std, IQR/1.34) N^(-1/5)``; falls back to the std when the IQR is zero."""
    x = np.asarray(samples, dtype=float)
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * x.size ** -0.2


def kde(samples, grid=None, bandwidth="silverman"):
    """Gaussian KDE of scalar ``samples``.

    ``bandwidth`` is ``"silverman"`` or a positive float.  The default grid has
    512 points spanning the samples padded by three bandwidths.  Zero-variance
    samples give a unit-mass spike on a three-point grid, or a kernel one grid
    step wide when ``grid`` is given (with a warning either way).
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise BadInput("KDE needs at least two samples")
    if not np.all(np.isfinite(x)):
        raise BadInput("KDE samples must be finite")
    if np.ptp(x) == 0:
        warnings.warn("zero-variance samples; returning a spike density", RuntimeWarning, stacklevel=2)
        if grid is not None and len(grid) > 1:
            # on a caller's grid the spike is a kernel one grid step wide
            grid = np.ascontiguousarray(grid, dtype=float)
            h = float(np.min(np.diff(grid)))
            return DensityEstimate(grid, kernels.gaussian_kde_eval(np.ascontiguousarray(x), grid, h), h, x.size,
                                   True)
        w = 1e-9 * max(1.0, abs(x[0]))
        g = np.array([x[0] - w, x[0], x[0] + w])
        # height from the grid as stored so the triangle has unit area exactly
        return DensityEstimate(g, np.array([0.0, 2.0 / (g[2] - g[0]), 0.0]), 0.0, x.size, True)
    if isinstance(bandwidth, str):
        if bandwidth != "silverman":
            raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
        h = silverman_bandwidth(x)
    else:
        h = float(bandwidth)
        if not h > 0:
            raise ValueError("bandwidth must be positive")
    if grid is None:
        grid = np.linspace(x.min() - KDE_GRID_PAD * h, x.max() + KDE_GRID_PAD * h, KDE_GRID_POINTS)
    grid = np.ascontiguousarray(grid, dtype=float)
    dens = kernels.gaussian_kde_eval(np.ascontiguousarray(x), grid, h)
    return DensityEstimate(grid, dens, h, x.size)


# Robustness sweep aggregation ---------------------------------------------------

@dataclass(frozen=True)
class SweepCell:
    sigma: float
    eps: float
    runs: tuple  # summary dicts, in seed order

    @property
    def completed(self):
        return [r for r in self.runs if r.get("diverged_at") is None]

    @property
    def n_diverged(self):
        return len(self.runs) - len(self.completed)

    def stat(self, key, how="median"):
        vals = [r[key] for r in self.completed]
        if not vals:
            return float("nan")
        return float(np.median(vals) if how == "median" else np.mean(vals))


@dataclass(frozen=True)
class SweepGrid:
    sigma_values: tuple
    eps_values: tuple
    repeats: int
    cells: dict = field(repr=False)  # (sigma, eps) -> SweepCell

    def cell(self, sigma, eps):
        return self.cells[(float(sigma), float(eps))]

    def table(self, how="median"):
        """Rows ``sigma, eps, rmse_total, rmse_x, rmse_y, n_diverged`` (eps-major order)."""
        rows = []
        for eps in self.eps_values:
            for sigma in self.sigma_values:
                c = self.cell(sigma, eps)
                rows.append([sigma, eps, c.stat("total_rmse", how), c.stat("rmse_x", how),
                             c.stat("rmse_y", how), c.n_diverged])
        return np.array(rows, dtype=float)


SWEEP_HEADER = ["sigma", "eps", "rmse_total", "rmse_x", "rmse_y", "n_diverged"]


def run_sweep(sigma_values, eps_values, repeats, run_one, seeds=None, workers=1):
    """Evaluate ``run_one(sigma, eps, seed) -> summary dict`` over the whole grid.

    ``seeds`` defaults to ``0..repeats-1``; every cell uses the same seed list.
    With ``workers > 1`` the tasks run in a process pool (``run_one`` must be
    picklable).  Results are keyed by task, so aggregation does not depend on
    completion order.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    seeds = list(range(repeats)) if seeds is None else list(seeds)[:repeats]
    if len(seeds) != repeats:
        raise ValueError("not enough seeds for the requested repeats")
    sig = tuple(float(s) for s in sigma_values)
    eps = tuple(float(e) for e in eps_values)
    tasks = [(s, e, seed) for e in eps for s in sig for seed in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_one, *zip(*tasks)))
    else:
        results = [run_one(*t) for t in tasks]
    by_task = dict(zip(tasks, results))
    cells = {(s, e): SweepCell(s, e, tuple(by_task[(s, e, seed)] for seed in seeds)) for e in eps for s in sig}
    return SweepGrid(sig, eps, repeats, cells)
