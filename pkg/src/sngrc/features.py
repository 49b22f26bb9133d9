"""NG-RC feature construction, ridge (Tikhonov) training and one-step prediction.

Feature layout for ``O_total = [O_X, O_u, O_n]``:

* ``O_X`` = ``[1]`` (optional) + linear block ``[X_i, X_{i-1}, ..., X_{i-delay}]``
  + every monomial with repetition of each requested degree over the linear
  block, degrees ascending and, within a degree, index tuples in lexicographic
  order (``itertools.combinations_with_replacement`` order).
* ``O_u`` = ``u_i``.
* ``O_n`` = realized stochastic increment ``g(X_i) sqrt(dt) xi_i`` (omitted in
  conventional mode).
"""

import itertools
import json
import math
import os
from dataclasses import dataclass, field
from math import comb
from typing import Optional

import numpy as np
import scipy.linalg

from . import kernels
from .errors import DimensionMismatch, InsufficientHistory, SingularFitError
from .io import atomic_write_text, read_csv, write_csv

RESIDUAL_TOL = 1e-8
DEFAULT_ALPHA_GRID = tuple(np.logspace(-10, 1, 45))


@dataclass(frozen=True)
class FeatureConfig:
    state_dim: int
    delay: int = 1
    poly_degrees: tuple = (2, 3)
    include_constant: bool = True
    include_noise_features: bool = True
    _index_tables: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.state_dim < 1:
            raise ValueError("state_dim must be >= 1")
        if self.delay < 0:
            raise ValueError("delay must be >= 0")
        degrees = tuple(sorted(int(p) for p in self.poly_degrees))
        if any(p < 2 for p in degrees) or len(set(degrees)) != len(degrees):
            raise ValueError(f"poly_degrees must be distinct integers >= 2, got {self.poly_degrees}")
        object.__setattr__(self, "poly_degrees", degrees)
        d = self.n_linear
        tables = tuple(np.array(list(itertools.combinations_with_replacement(range(d), p)),
                                dtype=np.int64).reshape(-1, p) for p in degrees)
        object.__setattr__(self, "_index_tables", tables)

    @property
    def n_linear(self):
        return self.state_dim * (self.delay + 1)

    @property
    def n_state_features(self):
        d = self.n_linear
        return int(self.include_constant) + d + sum(comb(d + p - 1, p) for p in self.poly_degrees)

    @property
    def n_noise_features(self):
        return self.state_dim if self.include_noise_features else 0

    @property
    def n_total(self):
        return self.n_state_features + self.state_dim + self.n_noise_features

    def monomial_indices(self):
        return self._index_tables

    def conventional(self):
        """Same recipe without the noise block."""
        return FeatureConfig(self.state_dim, self.delay, self.poly_degrees, self.include_constant, False)

    def feature_names(self):
        lin = [f"x{j + 1}[i{'-' + str(lag) if lag else ''}]"
               for lag in range(self.delay + 1) for j in range(self.state_dim)]
        names = ["1"] if self.include_constant else []
        names += lin
        for table in self._index_tables:
            names += ["*".join(lin[k] for k in row) for row in table]
        names += [f"u{j + 1}" for j in range(self.state_dim)]
        names += [f"n{j + 1}" for j in range(self.n_noise_features)]
        return names

    def to_dict(self):
        return {"state_dim": self.state_dim, "delay": self.delay,
                "poly_degrees": list(self.poly_degrees),
                "include_constant": self.include_constant,
                "include_noise_features": self.include_noise_features}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["state_dim"]), int(d.get("delay", 1)), tuple(d.get("poly_degrees", (2, 3))),
                   bool(d.get("include_constant", True)), bool(d.get("include_noise_features", True)))


@dataclass(frozen=True)
class FeatureVector:
    o_x: np.ndarray
    o_u: np.ndarray
    o_n: Optional[np.ndarray] = None

    def total(self):
        parts = [self.o_x, self.o_u] + ([self.o_n] if self.o_n is not None else [])
        return np.concatenate(parts)


def state_feature_matrix(states, config):
    """``O_X`` rows for every step that has enough history.

    ``states`` is ``(K + 1, n)``; row ``r`` of the result holds the features of
    step ``r + delay``.
    """
    states = np.asarray(states, dtype=float)
    n, lag = config.state_dim, config.delay
    if states.ndim != 2 or states.shape[1] != n:
        raise DimensionMismatch(f"states must be (*, {n})")
    rows = states.shape[0] - lag
    if rows <= 0:
        raise InsufficientHistory(f"need at least {lag + 1} states, got {states.shape[0]}")
    lin = np.hstack([states[lag - k: lag - k + rows] for k in range(lag + 1)])
    blocks = []
    if config.include_constant:
        blocks.append(np.ones((rows, 1)))
    blocks.append(lin)
    for table in config.monomial_indices():
        blocks.append(kernels.monomial_products(np.ascontiguousarray(lin), table))
    return np.hstack(blocks)


def state_features(recent, config):
    """``O_X`` for one step from the last ``delay + 1`` states (oldest first)."""
    recent = np.asarray(recent, dtype=float).reshape(-1, config.state_dim)
    if recent.shape[0] < config.delay + 1:
        raise InsufficientHistory(f"need {config.delay + 1} states of history")
    return state_feature_matrix(recent[-(config.delay + 1):], config)[0]


def build_features(traj, i, config):
    """Feature vector of step ``i`` of a trajectory (needs ``i >= delay``)."""
    if i < config.delay:
        raise InsufficientHistory(f"step {i} has fewer than {config.delay} past states")
    if i >= traj.n_steps:
        raise IndexError(f"step {i} outside trajectory with {traj.n_steps} steps")
    o_x = state_features(traj.states[i - config.delay: i + 1], config)
    o_u = traj.inputs[i].copy() if traj.inputs is not None else np.zeros(config.state_dim)
    o_n = None
    if config.include_noise_features:
        if traj.increments is None:
            raise ValueError("stochastic features need the trajectory's realized noise increments")
        o_n = traj.increments[i].copy()
    return FeatureVector(o_x, o_u, o_n)


def assemble_design(traj, config):
    """Feature matrix ``(n_total, K')`` and targets ``(n, K')`` with ``K' = n_steps - delay``.

    Column ``j`` holds the features of step ``j + delay``; its target is state
    ``j + delay + 1``.
    """
    lag = config.delay
    k = traj.n_steps
    if k <= lag:
        raise InsufficientHistory(f"trajectory with {k} steps is too short for delay {lag}")
    ox = state_feature_matrix(traj.states[:k], config)
    ou = traj.inputs[lag:k] if traj.inputs is not None else np.zeros((k - lag, config.state_dim))
    blocks = [ox, ou]
    if config.include_noise_features:
        if traj.increments is None:
            raise ValueError("stochastic features need the trajectory's realized noise increments")
        blocks.append(traj.increments[lag:k])
    design = np.hstack(blocks).T
    targets = traj.states[lag + 1: k + 1].T
    return np.ascontiguousarray(design), np.ascontiguousarray(targets)


# Weights ---------------------------------------------------------------------

@dataclass(frozen=True)
class WeightBlocks:
    w_x: np.ndarray
    w_u: np.ndarray
    w_n: Optional[np.ndarray]
    alpha: float
    config: FeatureConfig
    residual: float = float("nan")

    @property
    def full(self):
        parts = [self.w_x, self.w_u] + ([self.w_n] if self.w_n is not None else [])
        return np.hstack(parts)

    @classmethod
    def from_full(cls, w, config, alpha, residual=float("nan")):
        w = np.asarray(w, dtype=float)
        if w.shape != (config.state_dim, config.n_total):
            raise DimensionMismatch(f"weight matrix {w.shape} does not match layout "
                                    f"({config.state_dim}, {config.n_total})")
        a = config.n_state_features
        b = a + config.state_dim
        w_n = w[:, b:].copy() if config.include_noise_features else None
        return cls(w[:, :a].copy(), w[:, a:b].copy(), w_n, float(alpha), config, float(residual))

    def save(self, path):
        """Write the full matrix as CSV and the layout/alpha as a ``.json`` sidecar."""
        path = os.fspath(path)
        write_csv(path, self.config.feature_names(), self.full)
        meta = {"feature_config": self.config.to_dict(), "alpha": float(self.alpha).hex(),
                "alpha_decimal": repr(float(self.alpha)), "normal_equation_residual": self.residual,
                "blocks": {"w_x": self.config.n_state_features, "w_u": self.config.state_dim,
                           "w_n": self.config.n_noise_features}}
        atomic_write_text(sidecar_path(path), json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        path = os.fspath(path)
        with open(sidecar_path(path)) as fh:
            meta = json.load(fh)
        config = FeatureConfig.from_dict(meta["feature_config"])
        _, w, _ = read_csv(path)
        return cls.from_full(w, config, float.fromhex(meta["alpha"]),
                             meta.get("normal_equation_residual", float("nan")))


def sidecar_path(path):
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".json"


def normal_equation_residual(w, design, targets, alpha):
    """``||W (O O^T + a I) - X O^T||_F / ||X O^T||_F``."""
    gram = design @ design.T
    rhs = targets @ design.T
    r = w @ gram + alpha * w - rhs
    scale = np.linalg.norm(rhs)
    return float(np.linalg.norm(r) / scale) if scale > 0 else float(np.linalg.norm(r))


def ridge_solve(design, targets, alpha, refine=2):
    """Return ``(W, relative_residual)`` for ``W = X O^T (O O^T + a I)^{-1}``."""
    design = np.asarray(design, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    if design.shape[1] != targets.shape[1]:
        raise DimensionMismatch("design and targets must have the same number of samples")
    gram = design @ design.T
    rhs = targets @ design.T
    a = gram + alpha * np.eye(gram.shape[0])
    if alpha == 0:
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e13:
            raise SingularFitError(f"O O^T is numerically singular (condition number {cond:.3g})")
    try:
        factor = scipy.linalg.cho_factor(a, lower=False, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularFitError(f"ridge system is not positive definite: {exc}") from exc
    w = scipy.linalg.cho_solve(factor, rhs.T).T
    for _ in range(refine):
        r = rhs - w @ a
        w = w + scipy.linalg.cho_solve(factor, r.T).T
    if not np.all(np.isfinite(w)):
        raise SingularFitError("ridge solution is not finite")
    return w, normal_equation_residual(w, design, targets, alpha)


def ridge_fit(design, targets, alpha, config):
    w, res = ridge_solve(design, targets, alpha)
    return WeightBlocks.from_full(w, config, alpha, res)


def predict_step(w, fv):
    """``W_X O_X + W_u O_u (+ W_n O_n)``."""
    if fv.o_x.shape != (w.w_x.shape[1],) or fv.o_u.shape != (w.w_u.shape[1],):
        raise DimensionMismatch("feature vector does not match the weight layout")
    out = w.w_x @ fv.o_x + w.w_u @ fv.o_u
    if w.w_n is not None:
        if fv.o_n is None or fv.o_n.shape != (w.w_n.shape[1],):
            raise DimensionMismatch("stochastic weights need a noise feature block")
        out = out + w.w_n @ fv.o_n
    return out


def predict_design(w, design):
    return w.full @ design


def one_step_rmse(w, design, targets):
    err = predict_design(w, design) - targets
    return float(math.sqrt(np.mean(err * err)))


@dataclass(frozen=True)
class AlphaSelection:
    alpha: float
    alphas: np.ndarray
    rmse: np.ndarray


def select_alpha(design, targets, alpha_grid=DEFAULT_ALPHA_GRID, holdout_fraction=0.2):
    """Pick the ridge parameter by one-step RMSE on a trailing time-ordered holdout.

    Exact ties go to the larger alpha.  Fits that fail (singular systems) score ``inf``.
    """
    alphas = np.asarray(sorted(alpha_grid), dtype=float)
    if alphas.size == 0:
        raise ValueError("alpha grid is empty")
    if not 0 < holdout_fraction < 1:
        raise ValueError("holdout_fraction must lie in (0, 1)")
    k = design.shape[1]
    n_val = max(1, int(round(k * holdout_fraction)))
    n_tr = k - n_val
    if n_tr < 1:
        raise ValueError("not enough samples to split")
    o_tr, x_tr = design[:, :n_tr], targets[:, :n_tr]
    o_va, x_va = design[:, n_tr:], targets[:, n_tr:]
    scores = np.full(alphas.size, np.inf)
    for j, a in enumerate(alphas):
        try:
            w, _ = ridge_solve(o_tr, x_tr, a)
        except SingularFitError:
            continue
        err = w @ o_va - x_va
        scores[j] = math.sqrt(np.mean(err * err))
    best = np.min(scores)
    if not np.isfinite(best):
        raise SingularFitError("every candidate alpha produced a singular fit")
    j = np.flatnonzero(scores == best)[-1]
    return AlphaSelection(float(alphas[j]), alphas, scores)
