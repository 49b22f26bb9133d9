"""Kramers-Moyal drift / squared-diffusion identification with Lasso sparsification.

The regression basis is ``(1, x, x^2, x^3)`` (configurable degree).  Lasso
minimizes ``(1/(2m)) ||y - B theta||^2 + lam ||theta||_1`` on RMS-scaled basis
columns; coefficients are mapped back to the raw basis afterwards.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .sde import poly_basis

MAX_SWEEPS = 10_000
CD_TOL = 1e-10


def basis_names(degree=3):
    return ["1", "x"] + [f"x^{p}" for p in range(2, degree + 1)]


@dataclass(frozen=True)
class KmEstimates:
    states: np.ndarray
    drift: np.ndarray
    diffusion: np.ndarray
    dt: float


def km_targets(series, dt):
    """Pointwise conditional-moment targets ``dx/dt`` and ``dx^2/dt``."""
    x = np.asarray(series, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    if not dt > 0:
        raise ValueError("dt must be positive")
    dx = np.diff(x)
    return KmEstimates(x[:-1].copy(), dx / dt, dx * dx / dt, float(dt))


# Lasso -----------------------------------------------------------------------

def column_scales(design):
    s = np.sqrt(np.mean(design * design, axis=0))
    s[s == 0] = 1.0
    return s


def lambda_max(design, targets):
    """Smallest penalty at which every (scaled) coefficient is zero."""
    design = np.asarray(design, float)
    z = design / column_scales(design)
    return float(np.max(np.abs(z.T @ np.asarray(targets, float))) / design.shape[0])


@dataclass(frozen=True)
class LassoFit:
    coef: np.ndarray
    n_sweeps: int
    converged: bool
    objective: np.ndarray


def lasso_solve(design, targets, lam, max_sweeps=MAX_SWEEPS, tol=CD_TOL, trace=False, warm_start=None):
    """Cyclic coordinate descent with soft-thresholding.

    ``tol`` bounds the largest change of a scaled coefficient over one sweep.
    With ``trace=True`` the objective (in scaled coordinates) after every sweep
    is returned in ``objective``.
    """
    design = np.asarray(design, dtype=float)
    y = np.asarray(targets, dtype=float).ravel()
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    m = design.shape[0]
    scales = column_scales(design)
    z = design / scales
    gram = (z.T @ z) / m
    corr = (z.T @ y) / m
    yy = float(y @ y) / m
    beta0 = np.zeros(design.shape[1]) if warm_start is None else np.asarray(warm_start, float) * scales
    beta, sweeps, obj = kernels.lasso_cd(gram, corr, yy, float(lam), beta0, int(max_sweeps), float(tol),
                                         bool(trace))
    converged = sweeps < max_sweeps
    if not converged:
        warnings.warn(f"lasso coordinate descent did not converge in {max_sweeps} sweeps",
                      RuntimeWarning, stacklevel=2)
    return LassoFit(beta / scales, int(sweeps), bool(converged), np.asarray(obj))


def lasso_fit(design, targets, lam, **kwargs):
    """Lasso coefficient vector in the raw (unscaled) basis."""
    return lasso_solve(design, targets, lam, **kwargs).coef


def hard_threshold(coef, threshold):
    out = np.array(coef, dtype=float)
    out[np.abs(out) < threshold] = 0.0
    return out


def debiased_threshold(design, targets, coef, threshold):
    """Least-squares refit on the support of ``coef``, re-thresholding until stable.

    Every returned coefficient is either zero or at least ``threshold`` in magnitude.
    """
    out = hard_threshold(coef, threshold)
    for _ in range(design.shape[1] + 1):
        mask = out != 0
        if not mask.any():
            return out
        refit = np.zeros_like(out)
        refit[mask] = np.linalg.lstsq(design[:, mask], targets, rcond=None)[0]
        refit = hard_threshold(refit, threshold)
        if np.array_equal(refit != 0, mask):
            return refit
        out = refit
    return out


def sparse_estimate(design, targets, lam, relaxed=True, warm_start=None):
    """Lasso at ``lam`` followed by the hard threshold ``|theta| < lam -> 0``.

    With ``relaxed=True`` the surviving coefficients are refit by least squares
    (Lasso picks the support, the refit removes its shrinkage bias).
    """
    coef = lasso_solve(design, targets, lam, warm_start=warm_start).coef
    if relaxed:
        return debiased_threshold(design, targets, coef, lam), coef
    return hard_threshold(coef, lam), coef


# Cross-validated sparse SDE fit ---------------------------------------------

def contiguous_folds(m, k):
    edges = np.linspace(0, m, k + 1).round().astype(int)
    return [(edges[j], edges[j + 1]) for j in range(k)]


def default_lambda_grid(design, targets, n=30, ratio=1e-4):
    top = lambda_max(design, targets)
    if top <= 0:
        return np.zeros(1)
    return np.geomspace(top, top * ratio, n)


def cv_curve(design, targets, lambdas, kfolds, relaxed=True):
    """Mean held-out MSE per lambda over contiguous folds (lambdas processed high to low)."""
    m = design.shape[0]
    order = np.argsort(lambdas)[::-1]
    losses = np.zeros(len(lambdas))
    for lo, hi in contiguous_folds(m, kfolds):
        train = np.r_[0:lo, hi:m]
        warm = None
        for j in order:
            coef, warm = sparse_estimate(design[train], targets[train], lambdas[j], relaxed, warm)
            r = targets[lo:hi] - design[lo:hi] @ coef
            losses[j] += float(np.mean(r * r)) / kfolds
    return losses


def select_lambda(lambdas, losses):
    best = np.min(losses)
    candidates = np.flatnonzero(losses == best)
    return float(np.max(np.asarray(lambdas)[candidates]))


@dataclass(frozen=True)
class SparseSdeFit:
    theta1: np.ndarray
    theta2: np.ndarray
    alpha: float
    beta: float
    degree: int = 3
    cv_drift: tuple = field(default=((), ()), repr=False)
    cv_diffusion: tuple = field(default=((), ()), repr=False)

    @property
    def basis(self):
        return basis_names(self.degree)

    def thresholded(self):
        """Re-apply the hard thresholds (idempotent)."""
        return SparseSdeFit(hard_threshold(self.theta1, self.alpha), hard_threshold(self.theta2, self.beta),
                            self.alpha, self.beta, self.degree, self.cv_drift, self.cv_diffusion)

    def drift_support(self):
        return [n for n, c in zip(self.basis, self.theta1) if c != 0]

    def diffusion_support(self):
        return [n for n, c in zip(self.basis, self.theta2) if c != 0]

    def drift(self, x):
        return poly_basis(x, self.degree) @ self.theta1

    def diffusion_sq(self, x):
        return poly_basis(x, self.degree) @ self.theta2

    def to_dict(self):
        return {"basis": self.basis, "theta1": [float(v) for v in self.theta1],
                "theta2": [float(v) for v in self.theta2], "alpha": self.alpha, "beta": self.beta,
                "cv_drift": {"lambda": [float(v) for v in self.cv_drift[0]],
                             "loss": [float(v) for v in self.cv_drift[1]]},
                "cv_diffusion": {"lambda": [float(v) for v in self.cv_diffusion[0]],
                                 "loss": [float(v) for v in self.cv_diffusion[1]]}}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["theta1"], float), np.asarray(d["theta2"], float), float(d["alpha"]),
                   float(d["beta"]), len(d["basis"]) - 1,
                   (tuple(d["cv_drift"]["lambda"]), tuple(d["cv_drift"]["loss"])),
                   (tuple(d["cv_diffusion"]["lambda"]), tuple(d["cv_diffusion"]["loss"])))


def _fit_one(design, targets, lambda_grid, kfolds, relaxed):
    grid = default_lambda_grid(design, targets) if lambda_grid is None else np.asarray(lambda_grid, float)
    if np.all(targets == 0):
        return np.zeros(design.shape[1]), 0.0, (tuple(grid), tuple(np.zeros(len(grid))))
    losses = cv_curve(design, targets, grid, kfolds, relaxed)
    lam = select_lambda(grid, losses)
    coef, _ = sparse_estimate(design, targets, lam, relaxed)
    return coef, lam, (tuple(float(v) for v in grid), tuple(float(v) for v in losses))


def fit_sde(series, dt, lambda_grid=None, kfolds=5, degree=3, relaxed=True):
    """Sparse polynomial drift and squared diffusion from a scalar series.

    For each field the penalty is chosen by contiguous-block cross-validation
    and then doubles as the hard threshold (``alpha`` for drift, ``beta`` for
    diffusion).  ``lambda_grid`` defaults to 30 log-spaced values from each
    target's null penalty down by four decades.  ``relaxed=False`` keeps the
    raw Lasso coefficients instead of refitting the selected support.
    """
    if kfolds < 2:
        raise ValueError("kfolds must be >= 2")
    km = km_targets(series, dt)
    design = poly_basis(km.states, degree)
    th1, alpha, cv1 = _fit_one(design, km.drift, lambda_grid, kfolds, relaxed)
    th2, beta, cv2 = _fit_one(design, km.diffusion, lambda_grid, kfolds, relaxed)
    return SparseSdeFit(th1, th2, alpha, beta, degree, cv1, cv2)


@dataclass(frozen=True)
class FitEvaluation:
    drift_pred: np.ndarray
    diffusion_pred: np.ndarray
    rmse_drift: float
    rmse_diffusion: float


def evaluate_fit(fit, km):
    """Pointwise predictions of both fields against the KM targets."""
    fp = fit.drift(km.states)
    gp = fit.diffusion_sq(km.states)
    return FitEvaluation(fp, gp, float(math.sqrt(np.mean((fp - km.drift) ** 2))),
                         float(math.sqrt(np.mean((gp - km.diffusion) ** 2))))
