"""End-to-end experiment pipelines driven by a resolved config mapping.

Van der Pol pipeline (one seed)
    1. ``x0 ~ U(x0_range)^2``; simulate the free system (original) and the same
       noise realization under a held-uniform perturbation (perturbed).
    2. Drop the first ``discard`` samples, train NG-RC on the next ``n_train``
       one-step pairs of the perturbed run, test on the rest.
    3. Track the amplitude-scaled original orbit from the original's state at
       ``discard``, with fresh plant noise.

EEG pipeline (one seed)
    identify (fit on the first ``fit_samples`` processed samples), then
    A: perturbed run of the fitted controlled SDE from the seizure segment,
    B: NG-RC training / one-step validation on it,
    C: closed-loop drive of the fitted SDE from the seizure state toward the rest segment.

Every random stream is derived from the run seed and a fixed label, so the
pieces can be recomputed independently.
"""

import hashlib
import warnings
from dataclasses import dataclass
from functools import partial

import numpy as np

from . import metrics
from .control import GainMatrix, closed_loop_run, make_desired, make_perturbation
from .eeg import EegSeries, preprocess, read_eeg_csv, surrogate_raw
from .errors import ClampRejected, SngrcError
from .features import (FeatureConfig, assemble_design, one_step_rmse, ridge_fit, select_alpha)
from .sde import TimeGrid, Trajectory, derive_seed, philox, polynomial_sde, simulate, vdp_additive, \
    vdp_multiplicative
from .sysid import evaluate_fit, fit_sde, km_targets


class PhaseError(SngrcError):
    """A labelled stage of a multi-stage pipeline failed."""

    def __init__(self, phase, cause):
        super().__init__(f"phase {phase} failed: {cause}")
        self.phase = phase
        self.cause = cause


# Shared pieces ---------------------------------------------------------------

def make_system(system_cfg):
    kind = system_cfg["kind"]
    build = {"vdp_additive": vdp_additive, "vdp_multiplicative": vdp_multiplicative}[kind]
    return build(float(system_cfg["eps"]), float(system_cfg["sigma1"]), float(system_cfg["sigma2"]))


def feature_config(cfg, state_dim, stochastic=True):
    f = cfg["features"]
    return FeatureConfig(state_dim, int(f["delay"]), tuple(int(p) for p in f["poly_degrees"]),
                         bool(f["include_constant"]), bool(stochastic))


def alpha_grid(cfg):
    g = cfg["training"]["alpha_grid"]
    return np.logspace(float(g["log10_min"]), float(g["log10_max"]), int(g["num"]))


def gain(cfg, n):
    return GainMatrix.scalar(float(cfg["controller"]["gain"]), n)


def data_checksum(traj):
    h = hashlib.sha256()
    for arr in (traj.states, traj.inputs, traj.increments):
        if arr is not None:
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class TrainResult:
    weights: object
    alphas: np.ndarray
    validation_rmse: np.ndarray
    test_rmse: float
    n_train: int
    n_test: int
    checksum: str

    def report(self):
        return {"alpha": self.weights.alpha, "test_rmse": self.test_rmse,
                "normal_equation_residual": self.weights.residual, "n_train": self.n_train,
                "n_test": self.n_test, "training_data_sha256": self.checksum,
                "include_noise_features": self.weights.config.include_noise_features,
                "alpha_curve": {"alpha": [float(a) for a in self.alphas],
                                "validation_rmse": [float(r) for r in self.validation_rmse]}}


def train(cfg, traj, n_train, stochastic=True):
    """Fit NG-RC on the first ``n_train`` one-step pairs of ``traj``; test on the rest."""
    config = feature_config(cfg, traj.dim, stochastic)
    design, targets = assemble_design(traj, config)
    if design.shape[1] <= n_train:
        raise ValueError(f"trajectory gives {design.shape[1]} samples, need more than {n_train}")
    o_tr, x_tr = design[:, :n_train], targets[:, :n_train]
    o_te, x_te = design[:, n_train:], targets[:, n_train:]
    rank = np.linalg.matrix_rank(o_tr)
    if rank < o_tr.shape[0]:
        warnings.warn(f"training features are rank-deficient (rank {rank} of {o_tr.shape[0]}); "
                      "the fit leans on the ridge penalty", RuntimeWarning, stacklevel=2)
    fixed = cfg["training"]["alpha"]
    if fixed is None:
        sel = select_alpha(o_tr, x_tr, alpha_grid(cfg), float(cfg["training"]["holdout_fraction"]))
        alpha, alphas, curve = sel.alpha, sel.alphas, sel.rmse
    else:
        alpha, alphas, curve = float(fixed), np.array([float(fixed)]), np.array([np.nan])
    w = ridge_fit(o_tr, x_tr, alpha, config)
    return TrainResult(w, alphas, curve, one_step_rmse(w, o_te, x_te), n_train, o_te.shape[1],
                       data_checksum(traj))


# Van der Pol ---------------------------------------------------------------

@dataclass(frozen=True)
class VdpData:
    system: object
    original: Trajectory
    perturbed: Trajectory
    perturbation: np.ndarray
    desired: object
    seed: int


def vdp_data(cfg, seed, system=None):
    system = make_system(cfg["system"]) if system is None else system
    g = cfg["grid"]
    lo, hi = g["x0_range"]
    x0 = philox(derive_seed(seed, "x0")).uniform(lo, hi, system.dim)
    grid = TimeGrid(float(g["dt"]), int(g["n_samples"]) - 1)
    noise_seed = derive_seed(seed, "noise")
    bound = float(g["bound"])
    original = simulate(system, x0, grid, noise_seed, inputs=np.zeros((grid.n_steps, system.dim)), bound=bound)
    t = cfg["training"]
    pert = make_perturbation(system.dim, grid.n_steps, float(t["amplitude"]), int(t["hold"]),
                             derive_seed(seed, "perturb"))
    perturbed = simulate(system, x0, grid, noise_seed, inputs=pert.values, bound=bound)
    base = original.window(int(g["discard"]))
    c = cfg["controller"]
    center = c["center"] if isinstance(c["center"], str) else np.asarray(c["center"], float)
    desired = make_desired(base, [(int(s), float(f)) for s, f in c["events"]], center)
    return VdpData(system, original, perturbed, pert.values, desired, int(seed))


def vdp_train(cfg, data, stochastic=True):
    delay = int(cfg["features"]["delay"])
    start = int(cfg["grid"]["discard"]) - delay
    return train(cfg, data.perturbed.window(start), int(cfg["training"]["n_train"]), stochastic)


def vdp_control(cfg, data, weights, seed):
    discard = int(cfg["grid"]["discard"])
    delay = weights.config.delay
    c = cfg["controller"]
    des = data.desired
    grid = TimeGrid(des.dt, len(des) - 1, des.t0)
    event = c["etc_mode"] == "event"
    return closed_loop_run(data.system, weights, data.desired, gain(cfg, data.system.dim), grid,
                           derive_seed(seed, "control"), c["noise_policy"],
                           history=data.original.states[discard - delay:discard + 1],
                           bound=float(cfg["grid"]["bound"]),
                           trigger_threshold=float(c["trigger_threshold"]) if event else None,
                           etc_mode=c["etc_mode"])


@dataclass(frozen=True)
class VdpRun:
    data: VdpData
    training: TrainResult
    log: object

    def summary(self):
        s = self.log.summary()
        s.update({"seed": self.data.seed, "alpha": self.training.weights.alpha,
                  "test_rmse": self.training.test_rmse})
        return s


def vdp_run(cfg, seed, stochastic=True, data=None):
    data = vdp_data(cfg, seed) if data is None else data
    tr = vdp_train(cfg, data, stochastic)
    return VdpRun(data, tr, vdp_control(cfg, data, tr.weights, seed))


def sweep_cell_run(cfg, sigma, eps, seed):
    """Summary of one robustness-grid run (module level so it pickles)."""
    ratio = float(cfg["sweep"]["sigma2_ratio"])
    cell = dict(cfg, system={"kind": cfg["system"]["kind"], "eps": eps, "sigma1": sigma, "sigma2": ratio * sigma})
    try:
        return vdp_run(cell, seed).summary()
    except SngrcError as exc:  # a numerical failure counts as a divergence, not a crash
        return {"seed": seed, "diverged_at": -1, "error": str(exc)}


def run_sweep(cfg):
    sw = cfg["sweep"]
    return metrics.run_sweep(sw["sigma"], sw["eps"], len(cfg["seeds"]), partial(sweep_cell_run, cfg),
                             seeds=cfg["seeds"], workers=int(sw.get("workers", 1)))


# EEG ---------------------------------------------------------------------

def eeg_series(cfg, seed, csv_path=None):
    e = cfg["eeg"]
    if csv_path is None:
        s = e["surrogate"]
        raw = surrogate_raw(seed, n_samples=int(s["n_samples"]), channels=int(s["channels"]),
                            block=int(e["block"]), raw_scale=float(s["raw_scale"]), jitter=float(s["jitter"]),
                            switch=int(s["switch"]), noise_floor=tuple(s["noise_floor"]), dt=float(e["dt"]))
    else:
        raw = read_eeg_csv(csv_path)
    return preprocess(raw, int(e["channel"]), float(e["rate"]), int(e["block"]), e["normalization"],
                      int(e["min_samples"]))


@dataclass(frozen=True)
class Identification:
    fit: object
    train_eval: object
    test_eval: object
    km_train: object
    km_test: object


def identify(cfg, series):
    e = cfg["eeg"]
    x = series.processed if isinstance(series, EegSeries) else np.asarray(series, float)
    dt = float(e["dt"])
    n_fit = min(int(e["fit_samples"]), x.size)
    fit = fit_sde(x[:n_fit], dt, kfolds=int(e["kfolds"]), relaxed=bool(e["relaxed"]))
    km_train = km_targets(x[:n_fit], dt)
    km_test = km_targets(x[n_fit - 1:], dt) if x.size - n_fit >= 1 else None
    test_eval = evaluate_fit(fit, km_test) if km_test is not None else None
    return Identification(fit, evaluate_fit(fit, km_train), test_eval, km_train, km_test)


def shared_kde(samples_by_name):
    """KDEs of several sample sets on one common grid (512 points, +-3 of the widest bandwidth)."""
    hs = [metrics.silverman_bandwidth(s) for s in samples_by_name.values() if np.ptp(s) > 0]
    h = max(hs) if hs else 1e-3
    lo = min(np.min(s) for s in samples_by_name.values()) - metrics.KDE_GRID_PAD * h
    hi = max(np.max(s) for s in samples_by_name.values()) + metrics.KDE_GRID_PAD * h
    grid = np.linspace(lo, hi, metrics.KDE_GRID_POINTS)
    return grid, {k: metrics.kde(s, grid) for k, s in samples_by_name.items()}


@dataclass(frozen=True)
class EegRun:
    identification: Identification
    perturbed: Trajectory
    training: TrainResult
    log: object
    desired: np.ndarray
    original: np.ndarray
    kde_grid: np.ndarray
    kdes: dict
    seed: int

    def summary(self):
        s = self.log.summary()
        return {"seed": self.seed, "phase_b_validation_rmse": self.training.test_rmse,
                "phase_b_alpha": self.training.weights.alpha, "phase_c_rmse": s["total_rmse"],
                "phase_c_max_abs_u": s["max_abs_u"], "diverged_at": s["diverged_at"],
                "trigger_count": s["trigger_count"],
                "iqr": {k: d.iqr() for k, d in self.kdes.items()},
                "drift_support": self.identification.fit.drift_support(),
                "diffusion_support": self.identification.fit.diffusion_support(),
                "theta1": [float(v) for v in self.identification.fit.theta1],
                "theta2": [float(v) for v in self.identification.fit.theta2]}


def eeg_run(cfg, seed, series):
    e = cfg["eeg"]
    x = series.processed
    dt = float(e["dt"])
    d0, d1 = (int(v) for v in e["desired"])
    o0, o1 = (int(v) for v in e["original"])
    start, steps = int(e["control_start"]), int(e["control_steps"])
    if not (0 < start and d0 + start + steps < x.size and o0 + start + steps <= min(o1, x.size)):
        raise PhaseError("C", f"segments do not fit a series of {x.size} samples")
    try:
        ident = identify(cfg, x)
    except (SngrcError, ValueError) as exc:
        raise PhaseError("identify", exc) from exc

    # Phase A: perturbed run of the identified controlled SDE.
    try:
        plant = polynomial_sde(ident.fit.theta1, ident.fit.theta2)
        n_a = int(e["perturb_steps"])
        t = cfg["training"]
        pert = make_perturbation(1, n_a, float(t["amplitude"]), int(t["hold"]), derive_seed(seed, "perturb"))
        perturbed = simulate(plant, [x[o0]], TimeGrid(dt, n_a), derive_seed(seed, "noise"), inputs=pert.values,
                             bound=float(cfg["grid"]["bound"]))
    except (ClampRejected, SngrcError) as exc:
        raise PhaseError("A", exc) from exc

    # Phase B: NG-RC on the first train_steps pairs, one-step validation on the rest.
    try:
        tr = train(cfg, perturbed, int(e["train_steps"]))
    except (SngrcError, ValueError) as exc:
        raise PhaseError("B", exc) from exc

    # Phase C: from the seizure state toward the rest segment.
    desired = x[d0 + start:d0 + start + steps + 1]
    original = x[o0 + start:o0 + start + steps]
    delay = tr.weights.config.delay
    base = Trajectory(TimeGrid(dt, steps, start * dt), desired[:, None])
    c = cfg["controller"]
    event = c["etc_mode"] == "event"
    log = closed_loop_run(plant, tr.weights, make_desired(base, [(0, 1.0)]), gain(cfg, 1), base.grid,
                          derive_seed(seed, "control"), c["noise_policy"],
                          history=x[o0 + start - delay:o0 + start + 1, None], bound=float(cfg["grid"]["bound"]),
                          trigger_threshold=float(c["trigger_threshold"]) if event else None,
                          etc_mode=c["etc_mode"])
    if log.n_records < 2:
        raise PhaseError("C", f"closed loop diverged at step {log.diverged_at}")
    grid, kdes = shared_kde({"desired": desired[:steps], "controlled": log.x[:, 0], "original": original})
    return EegRun(ident, perturbed, tr, log, desired, original, grid, kdes, int(seed))
