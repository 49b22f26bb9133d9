"""Inverse-model tracking control built on trained NG-RC weights."""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, RankDeficientInputGain
from .features import FeatureVector, predict_step, state_features
from .io import write_csv, write_json
from .sde import DEFAULT_BOUND, NoiseDraw, SdeSystem, Trajectory, noise_increment, philox

NOISE_POLICIES = ("zero", "oracle", "residual")
ETC_MODES = ("continuous", "event")
ILL_CONDITIONED = 1e8
PINV_RTOL = 1e-10


@dataclass(frozen=True)
class GainMatrix:
    k: np.ndarray

    def __post_init__(self):
        k = np.atleast_2d(np.asarray(self.k, dtype=float))
        if k.shape[0] != k.shape[1]:
            raise ValueError("gain matrix must be square")
        rho = float(np.max(np.abs(np.linalg.eigvals(k)))) if k.size else 0.0
        if rho >= 1.0 - 1e-10:
            raise ValueError(f"spectral radius {rho:.6g} is not below 1")
        k.setflags(write=False)
        object.__setattr__(self, "k", k)

    @classmethod
    def scalar(cls, value, n):
        return cls(value * np.eye(n))

    @property
    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.k))))


@dataclass(frozen=True)
class DesiredTrajectory:
    """Amplitude-scaled copy of a base orbit.

    Before the first event the factor is 1; from ``events[j][0]`` on it is
    ``events[j][1]``.  Desired state ``i`` is ``center + factor(i) (base_i - center)``.
    """

    base: np.ndarray
    events: tuple
    center: np.ndarray
    t0: float = 0.0
    dt: float = 1.0

    def __post_init__(self):
        base = np.atleast_2d(np.asarray(self.base, dtype=float))
        if base.shape[0] == 0:
            raise ValueError("empty base trajectory")
        steps = [int(s) for s, _ in self.events]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("event steps must be strictly increasing")
        if any(f <= 0 for _, f in self.events):
            raise ValueError("amplitude factors must be positive")
        if steps and (steps[0] < 0 or steps[-1] >= base.shape[0]):
            raise ValueError("events must lie within the base trajectory")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "events", tuple((int(s), float(f)) for s, f in self.events))
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(base.shape[1]))

    def factors(self):
        f = np.ones(self.base.shape[0])
        for step, factor in self.events:
            f[step:] = factor
        return f

    @property
    def states(self):
        # factor-1 stretches are the base orbit itself, bit for bit
        f = self.factors()
        out = self.base.copy()
        scaled = f != 1.0
        out[scaled] = self.center + f[scaled, None] * (self.base[scaled] - self.center)
        return out

    def __len__(self):
        return self.base.shape[0]


def make_desired(base, events, center_mode="tail_mean", tail_fraction=0.8):
    """Build a :class:`DesiredTrajectory` from a trajectory or state matrix.

    ``center_mode`` is ``"tail_mean"`` (mean of the last ``tail_fraction`` of the
    base states), ``"origin"``, or an explicit center vector.
    """
    if isinstance(base, Trajectory):
        states, t0, dt = base.states, base.grid.t0, base.grid.dt
    else:
        states, t0, dt = np.atleast_2d(np.asarray(base, dtype=float)), 0.0, 1.0
    if states.shape[0] == 0:
        raise ValueError("empty base trajectory")
    if isinstance(center_mode, str):
        if center_mode == "tail_mean":
            start = states.shape[0] - int(round(states.shape[0] * tail_fraction))
            center = states[start:].mean(axis=0)
        elif center_mode == "origin":
            center = np.zeros(states.shape[1])
        else:
            raise ValueError(f"unknown center mode {center_mode!r}")
    else:
        center = np.asarray(center_mode, dtype=float)
    return DesiredTrajectory(states, tuple(events), center, t0, dt)


def nearest_index(states, x):
    """Index of the base-orbit point closest (Euclidean) to ``x``."""
    d = np.sum((np.asarray(states) - np.asarray(x)) ** 2, axis=1)
    return int(np.argmin(d))


def static_trigger(e, threshold):
    """``||e||_2 >= threshold``."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    return bool(np.linalg.norm(e) >= threshold)


@dataclass(frozen=True)
class PerturbationSignal:
    values: np.ndarray
    amplitude: float
    hold: int
    seed: int


def make_perturbation(n, n_steps, amplitude, hold, seed):
    """Piecewise-constant uniform noise on ``[-A, A]``, redrawn every ``hold`` steps."""
    if not amplitude > 0:
        raise ValueError("amplitude must be positive")
    if hold < 1:
        raise ValueError("hold must be >= 1")
    blocks = -(-n_steps // hold)
    draws = philox(seed, 0x5E17).uniform(-amplitude, amplitude, size=(blocks, n))
    values = np.repeat(draws, hold, axis=0)[:n_steps]
    values.setflags(write=False)
    return PerturbationSignal(values, float(amplitude), int(hold), int(seed))


class InputGainInverse:
    """Solves ``W_u u = b``; switches to a pseudo-inverse when ``cond(W_u) >= 1e8``."""

    def __init__(self, w_u):
        w_u = np.atleast_2d(np.asarray(w_u, dtype=float))
        s = np.linalg.svd(w_u, compute_uv=False)
        if s[0] == 0 or s[-1] < PINV_RTOL * s[0]:
            raise RankDeficientInputGain(
                f"W_u is rank-deficient (singular values {s[0]:.3g} .. {s[-1]:.3g})")
        self.w_u = w_u
        self.cond = float(s[0] / s[-1])
        self.ill_conditioned = self.cond >= ILL_CONDITIONED
        self._pinv = np.linalg.pinv(w_u, rcond=PINV_RTOL) if self.ill_conditioned else None

    def solve(self, b):
        if self._pinv is not None:
            return self._pinv @ b
        return np.linalg.solve(self.w_u, b)


def control_input(w, o_x, o_n, x_des_next, e, K, inverse=None):
    """``u = W_u^{-1} [x_des_{i+1} - W_X O_X - W_n O_n + K e_i]``.

    The noise term is dropped for conventional weights (``w.w_n is None``).
    Pass a prebuilt :class:`InputGainInverse` to avoid refactoring ``W_u`` each step.
    """
    if inverse is None:
        inverse = InputGainInverse(w.w_u)
    k = K.k if isinstance(K, GainMatrix) else np.atleast_2d(K)
    bracket = x_des_next - w.w_x @ o_x + k @ e
    if w.w_n is not None and o_n is not None:
        bracket = bracket - w.w_n @ o_n
    return inverse.solve(bracket)


@dataclass(frozen=True)
class ModelPlant:
    """A plant that evolves by the trained NG-RC map itself.

    Its noise features are the increments ``g(x) sqrt(dt) xi`` of ``noise_system``.
    """

    weights: object
    noise_system: SdeSystem

    @property
    def dim(self):
        return self.weights.config.state_dim

    @property
    def noise_dim(self):
        return self.noise_system.noise_dim


@dataclass
class ControlLog:
    t: np.ndarray
    x: np.ndarray
    x_des: np.ndarray
    u: np.ndarray
    o_n: np.ndarray
    e: np.ndarray
    triggered: np.ndarray
    diverged_at: Optional[int] = None
    ill_conditioned: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def n_records(self):
        return self.e.shape[0]

    def summary(self):
        e = self.e
        if e.size:
            total = float(math.sqrt(np.mean(e * e)))
            per = np.sqrt(np.mean(e * e, axis=0))
            max_u = float(np.max(np.abs(self.u)))
        else:
            total, per, max_u = float("nan"), np.full(self.x.shape[1], np.nan), float("nan")
        out = {"total_rmse": total, "max_abs_u": max_u, "diverged_at": self.diverged_at,
               "n_records": int(self.n_records), "trigger_count": int(np.sum(self.triggered)),
               "ill_conditioned_w_u": bool(self.ill_conditioned)}
        names = ["x", "y"] if e.shape[1] == 2 else [f"x{j + 1}" for j in range(e.shape[1])]
        for name, v in zip(names, per):
            out[f"rmse_{name}"] = float(v)
        return out

    def header(self):
        n = self.x.shape[1]
        cols = ["t"]
        for p in ("x", "xdes", "u", "e"):
            cols += [f"{p}{j + 1}" for j in range(n)]
        return cols

    def to_matrix(self):
        return np.hstack([self.t[:, None], self.x, self.x_des, self.u, self.e])

    def write(self, csv_path, summary_path, comments=(), extra=None):
        write_csv(csv_path, self.header(), self.to_matrix(), comments)
        summary = self.summary()
        if extra:
            summary.update(extra)
        write_json(summary_path, summary)


def closed_loop_run(plant, w, desired, K, grid, seed, noise_feature_policy="zero", history=None,
                    bound=DEFAULT_BOUND, trigger_threshold=None, etc_mode="continuous"):
    """Drive ``plant`` along ``desired`` with the inverse NG-RC control law.

    Parameters
    ----------
    plant : SdeSystem or ModelPlant
        Advanced one Euler-Maruyama step (or one NG-RC map application) per
        control step with fresh noise from ``seed``.
    history : (delay + 1, n) array, optional
        Plant states ``x_{-delay} .. x_0`` (oldest first).  Defaults to the first
        desired state repeated.
    noise_feature_policy : {"zero", "oracle", "residual"}
        What the controller plugs in for ``O_n``: zeros, the exact increment the
        plant is about to receive, or last step's innovation ``x_i - x_hat_i``.
    trigger_threshold, etc_mode
        With ``etc_mode="event"`` the control law is only evaluated when
        ``||e_i|| >= trigger_threshold``; otherwise ``u_i = 0``.  In
        ``"continuous"`` mode the trigger is only recorded.

    Divergence (non-finite state or ``|x| > bound``) ends the run; the log keeps
    the records up to the failing step and ``diverged_at`` holds its index.
    """
    if noise_feature_policy not in NOISE_POLICIES:
        raise ValueError(f"unknown noise feature policy {noise_feature_policy!r}")
    if etc_mode not in ETC_MODES:
        raise ValueError(f"unknown ETC mode {etc_mode!r}")
    if etc_mode == "event" and trigger_threshold is None:
        raise ValueError("event-triggered mode needs a threshold")
    cfg = w.config
    n = cfg.state_dim
    if plant.dim != n:
        raise DimensionMismatch(f"plant dimension {plant.dim} != model dimension {n}")
    xdes = desired.states if isinstance(desired, DesiredTrajectory) else np.asarray(desired, float)
    k_steps = grid.n_steps
    if xdes.shape[0] < k_steps + 1:
        raise ValueError(f"desired trajectory has {xdes.shape[0]} states, run needs {k_steps + 1}")
    kmat = K.k if isinstance(K, GainMatrix) else np.atleast_2d(np.asarray(K, float))
    noise_sys = plant.noise_system if isinstance(plant, ModelPlant) else plant
    if history is None:
        history = np.repeat(xdes[:1], cfg.delay + 1, axis=0)
    hist = np.array(history, dtype=float).reshape(-1, n)[-(cfg.delay + 1):]
    if hist.shape[0] < cfg.delay + 1:
        raise ValueError(f"history needs {cfg.delay + 1} states")

    xi = NoiseDraw(seed, k_steps, noise_sys.noise_dim).stream
    inverse = InputGainInverse(w.w_u)
    sq = math.sqrt(grid.dt)
    stochastic = w.w_n is not None

    xs = np.zeros((k_steps, n))
    us = np.zeros((k_steps, n))
    ons = np.zeros((k_steps, n))
    es = np.zeros((k_steps, n))
    trig = np.zeros(k_steps, dtype=bool)
    diverged = None
    innovation = np.zeros(n)
    done = 0
    for i in range(k_steps):
        x = hist[-1]
        t = grid.time(i)
        e = x - xdes[i]
        o_x = state_features(hist, cfg)
        inc = noise_increment(noise_sys, x, t, sq, xi[i])
        if noise_feature_policy == "oracle":
            o_n = inc
        elif noise_feature_policy == "residual":
            o_n = innovation
        else:
            o_n = np.zeros(n)
        fired = trigger_threshold is None or static_trigger(e, trigger_threshold)
        if etc_mode == "continuous" or fired:
            u = control_input(w, o_x, o_n if stochastic else None, xdes[i + 1], e, kmat, inverse)
        else:
            u = np.zeros(n)
        xs[i], us[i], es[i], trig[i] = x, u, e, fired and trigger_threshold is not None
        ons[i] = o_n if stochastic else 0.0
        done = i + 1
        with np.errstate(over="ignore", invalid="ignore"):
            if isinstance(plant, ModelPlant):
                x_next = predict_step(plant.weights, FeatureVector(o_x, u, inc if plant.weights.w_n is not None else None))
            else:
                x_next = x + (plant.f(x, t) + u) * grid.dt + inc
        if not np.all(np.isfinite(x_next)) or np.max(np.abs(x_next)) > bound or not np.all(np.isfinite(u)):
            diverged = i
            break
        if noise_feature_policy == "residual":
            x_hat = predict_step(w, FeatureVector(o_x, u, np.zeros(n) if stochastic else None))
            innovation = x_next - x_hat
        hist = np.vstack([hist[1:], x_next])

    sl = slice(0, done)
    return ControlLog(grid.t0 + np.arange(done) * grid.dt, xs[sl], xdes[:done].copy(), us[sl], ons[sl],
                      es[sl], trig[sl], diverged, inverse.ill_conditioned,
                      {"noise_feature_policy": noise_feature_policy, "etc_mode": etc_mode,
                       "trigger_threshold": trigger_threshold})


def replay_errors(log):
    """Recompute ``e_i = x_i - x_des,i`` from the stored states."""
    return log.x - log.x_des

