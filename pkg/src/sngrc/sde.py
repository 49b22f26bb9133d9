"""SDE systems and a reproducible Euler-Maruyama integrator.

Noise streams
-------------
:class:`NoiseDraw` produces i.i.d. standard normals with numpy's counter-based
Philox bit generator.  Noise dimension ``j`` of seed ``s`` is drawn from
``Generator(Philox(SeedSequence([s, j]))).standard_normal(n_steps)``, so each
dimension has its own substream and the values do not depend on platform or on
how many steps are requested around them.
"""

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ClampRejected, DimensionMismatch, IntegrationBlowup
from .io import read_csv, write_csv

DEFAULT_BOUND = 1e6


def derive_seed(seed, label):
    """Deterministic 64-bit child seed for a named purpose (``"control"``, ...)."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(label.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def philox(seed, *key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *key])))


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise ValueError(f"n_steps must be a non-negative integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    def time(self, i):
        return self.t0 + i * self.dt

    @property
    def times(self):
        return self.t0 + np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class NoiseDraw:
    seed: int
    n_steps: int
    noise_dim: int
    stream: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cols = [philox(self.seed, j).standard_normal(self.n_steps) for j in range(self.noise_dim)]
        stream = np.column_stack(cols) if cols else np.empty((self.n_steps, 0))
        stream = stream.reshape(self.n_steps, self.noise_dim)
        stream.setflags(write=False)
        object.__setattr__(self, "stream", stream)

    def moments_ok(self):
        """Loose sanity check: ``|mean| < 5/sqrt(N)`` and ``|var-1| < 5 sqrt(2/N)``."""
        n = self.stream.size
        if n < 2:
            return True
        return bool(abs(self.stream.mean()) < 5 / math.sqrt(n)
                    and abs(self.stream.var() - 1) < 5 * math.sqrt(2 / n))


@dataclass(frozen=True)
class SdeSystem:
    """``dX = [f(X, t) + u] dt + g(X, t) dW`` with ``f: R^n -> R^n``, ``g: R^n -> R^{n x m}``."""

    dim: int
    noise_dim: int
    drift: Callable
    diffusion: Callable
    name: str = "custom"
    params: dict = field(default_factory=dict)
    box: tuple = None

    def __post_init__(self):
        if self.box is None:
            object.__setattr__(self, "box", (-3.0 * np.ones(self.dim), 3.0 * np.ones(self.dim)))
        else:
            lo, hi = self.box
            object.__setattr__(self, "box", (np.broadcast_to(np.asarray(lo, float), (self.dim,)).copy(),
                                             np.broadcast_to(np.asarray(hi, float), (self.dim,)).copy()))

    def f(self, x, t=0.0):
        out = np.asarray(self.drift(x, t), dtype=float)
        if out.shape != (self.dim,):
            raise DimensionMismatch(f"drift returned shape {out.shape}, expected ({self.dim},)")
        return out

    def g(self, x, t=0.0):
        out = np.asarray(self.diffusion(x, t), dtype=float)
        if out.shape != (self.dim, self.noise_dim):
            raise DimensionMismatch(
                f"diffusion returned shape {out.shape}, expected ({self.dim}, {self.noise_dim})")
        return out

    def with_noise_scale(self, factor):
        """Same drift, diffusion multiplied by ``factor``."""
        base = self.diffusion
        return SdeSystem(self.dim, self.noise_dim, self.drift, lambda x, t: factor * base(x, t),
                         name=self.name, params={**self.params, "noise_scale": factor}, box=self.box)


@dataclass
class Trajectory:
    grid: TimeGrid
    states: np.ndarray
    inputs: Optional[np.ndarray] = None
    noises: Optional[np.ndarray] = None
    # realized stochastic increments g(X_i) sqrt(dt) xi_i, one row per step
    increments: Optional[np.ndarray] = None

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        k = self.grid.n_steps
        if self.states.shape[0] != k + 1:
            raise DimensionMismatch(f"states has {self.states.shape[0]} rows, grid needs {k + 1}")
        for name in ("inputs", "noises", "increments"):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            arr = arr.reshape(k, -1) if k else arr.reshape(0, arr.shape[-1] if arr.ndim == 2 else 0)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            setattr(self, name, arr)
        if not np.all(np.isfinite(self.states)):
            raise ValueError("states contain non-finite values")

    @property
    def dim(self):
        return self.states.shape[1]

    @property
    def n_steps(self):
        return self.grid.n_steps

    def with_increments(self, system):
        """Recompute realized noise increments from stored ``noises`` (e.g. after CSV load)."""
        if self.noises is None:
            raise ValueError("trajectory carries no noise samples")
        sq = math.sqrt(self.grid.dt)
        inc = np.array([noise_increment(system, self.states[i], self.grid.time(i), sq, self.noises[i])
                        for i in range(self.n_steps)]).reshape(self.n_steps, self.dim)
        return Trajectory(self.grid, self.states, self.inputs, self.noises, inc)

    def window(self, start, stop=None):
        """Sub-trajectory over states ``start..stop`` (inclusive of the end state)."""
        stop = self.n_steps if stop is None else stop
        grid = TimeGrid(self.grid.dt, stop - start, self.grid.time(start))

        def cut(a):
            return None if a is None else a[start:stop]

        return Trajectory(grid, self.states[start:stop + 1], cut(self.inputs), cut(self.noises),
                          cut(self.increments))

    # CSV ---------------------------------------------------------------
    def header(self):
        n = self.dim
        cols = ["t"] + [f"x{j + 1}" for j in range(n)]
        if self.inputs is not None:
            cols += [f"u{j + 1}" for j in range(n)]
        if self.noises is not None:
            cols += [f"xi{j + 1}" for j in range(self.noises.shape[1])]
        return cols

    def to_matrix(self):
        k = self.n_steps
        blocks = [self.grid.times[:, None], self.states]
        for arr in (self.inputs, self.noises):
            if arr is not None:
                padded = np.full((k + 1, arr.shape[1]), np.nan)
                padded[:k] = arr
                blocks.append(padded)
        return np.hstack(blocks)

    def to_csv(self, path, comments=()):
        grid_line = f"grid dt={float(self.grid.dt)!r} t0={float(self.grid.t0)!r} n_steps={self.n_steps}"
        write_csv(path, self.header(), self.to_matrix(), [*comments, grid_line])

    @classmethod
    def from_csv(cls, path):
        header, m, comments = read_csv(path)
        if not header or header[0] != "t" or m.shape[0] < 1:
            raise ValueError(f"{path}: not a trajectory CSV")
        grid_meta = {}
        for c in comments:
            if c.startswith("grid "):
                grid_meta = dict(kv.split("=", 1) for kv in c[5:].split())
        xs = [i for i, h in enumerate(header) if h.startswith("x") and not h.startswith("xi")]
        us = [i for i, h in enumerate(header) if h.startswith("u")]
        xis = [i for i, h in enumerate(header) if h.startswith("xi")]
        t = m[:, 0]
        n_steps = m.shape[0] - 1
        if grid_meta:
            grid = TimeGrid(float(grid_meta["dt"]), n_steps, float(grid_meta["t0"]))
        else:
            grid = TimeGrid((t[-1] - t[0]) / n_steps if n_steps else 1.0, n_steps, t[0])
        inputs = m[:-1, us] if us else None
        noises = m[:-1, xis] if xis else None
        return cls(grid, m[:, xs], inputs, noises)


def noise_increment(system, x, t, sqrt_dt, xi):
    return (system.g(x, t) @ xi) * sqrt_dt


def euler_maruyama_step(x, t, system, u, dt, xi, step=0, bound=math.inf):
    """One update ``x + [f(x,t) + u] dt + g(x,t) sqrt(dt) xi``.

    Raises :class:`IntegrationBlowup` (carrying ``step``) when the result is
    non-finite or any component exceeds ``bound`` in magnitude.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    if x.shape != (system.dim,):
        raise DimensionMismatch(f"state shape {x.shape} does not match dim {system.dim}")
    inc = noise_increment(system, x, t, math.sqrt(dt), np.asarray(xi, dtype=float))
    with np.errstate(over="ignore", invalid="ignore"):
        x_next = x + (system.f(x, t) + u) * dt + inc
    if not np.all(np.isfinite(x_next)) or np.max(np.abs(x_next)) > bound:
        raise IntegrationBlowup(step)
    return x_next


def _step_with_increment(x, t, system, u, dt, sqrt_dt, xi):
    inc = noise_increment(system, x, t, sqrt_dt, xi)
    with np.errstate(over="ignore", invalid="ignore"):
        return x + (system.f(x, t) + u) * dt + inc, inc


def simulate(system, x0, grid, seed, inputs=None, bound=DEFAULT_BOUND):
    """Integrate ``system`` from ``x0`` over ``grid`` with the noise of ``seed``.

    ``inputs`` is ``None``, an ``(n_steps, dim)`` array, or a callable
    ``(i, t, x) -> u``.  The returned trajectory records the inputs, the standard
    normal draws and the realized increments actually used.
    """
    x = np.asarray(x0, dtype=float).reshape(system.dim)
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")
    k = grid.n_steps
    n = system.dim
    xi = NoiseDraw(seed, k, system.noise_dim).stream
    states = np.empty((k + 1, n))
    states[0] = x
    incs = np.empty((k, n))
    us = np.zeros((k, n))
    if inputs is not None and not callable(inputs):
        us[:] = np.asarray(inputs, dtype=float).reshape(k, n)
    sq = math.sqrt(grid.dt)
    for i in range(k):
        t = grid.time(i)
        if callable(inputs):
            us[i] = inputs(i, t, x)
        x, incs[i] = _step_with_increment(x, t, system, us[i], grid.dt, sq, xi[i])
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > bound:
            partial = Trajectory(TimeGrid(grid.dt, i, grid.t0), states[:i + 1],
                                 us[:i] if inputs is not None else None, xi[:i], incs[:i])
            raise IntegrationBlowup(i, partial=partial)
        states[i + 1] = x
    return Trajectory(grid, states, us if inputs is not None else None, xi.copy(), incs)


# Built-in systems ------------------------------------------------------------

def vdp_additive(eps, sigma1, sigma2):
    """Multiscale stochastic Van der Pol with additive noise.

    ``dx = -y dt + s1 dW1``, ``dy = (y - y^3/3 + x)/eps dt + s2/sqrt(eps) dW2``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    inv = 1.0 / eps
    g = np.diag([float(sigma1), float(sigma2) / math.sqrt(eps)])
    g.setflags(write=False)

    def drift(s, t):
        x, y = s
        return np.array([-y, inv * (y - y * y * y / 3.0 + x)])

    def diffusion(s, t):
        return g

    return SdeSystem(2, 2, drift, diffusion, "vdp_additive",
                     {"eps": eps, "sigma1": sigma1, "sigma2": sigma2})


def vdp_multiplicative(eps, sigma1, sigma2):
    """Van der Pol drift with diffusion ``diag(s1 x, s2/sqrt(eps) y)``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    inv = 1.0 / eps
    a = float(sigma1)
    b = float(sigma2) / math.sqrt(eps)

    def drift(s, t):
        x, y = s
        return np.array([-y, inv * (y - y * y * y / 3.0 + x)])

    def diffusion(s, t):
        return np.array([[a * s[0], 0.0], [0.0, b * s[1]]])

    return SdeSystem(2, 2, drift, diffusion, "vdp_multiplicative",
                     {"eps": eps, "sigma1": sigma1, "sigma2": sigma2})


def poly_basis(x, degree=3):
    """Columns ``1, x, ..., x**degree`` for scalar or 1-d ``x``."""
    x = np.asarray(x, dtype=float)
    return np.stack([x ** p for p in range(degree + 1)], axis=-1)


def polynomial_sde(theta1, theta2, box=(-0.5, 0.5), max_clamp_fraction=0.05, n_probe=1001):
    """One-dimensional SDE with drift ``theta1 . B(x)`` and diffusion ``sqrt(max(0, theta2 . B(x)))``.

    ``B(x) = (1, x, x^2, x^3)``.  The squared diffusion is probed on ``n_probe``
    evenly spaced points of ``box``; construction fails with
    :class:`ClampRejected` if more than ``max_clamp_fraction`` of them are negative.
    """
    th1 = np.asarray(theta1, dtype=float).copy()
    th2 = np.asarray(theta2, dtype=float).copy()
    if th1.shape != (4,) or th2.shape != (4,):
        raise ValueError("theta1 and theta2 must have 4 entries (basis 1, x, x^2, x^3)")
    probes = np.linspace(box[0], box[1], n_probe)
    g2 = poly_basis(probes) @ th2
    clamp_fraction = float(np.mean(g2 < 0))
    if clamp_fraction > max_clamp_fraction:
        raise ClampRejected(
            f"squared diffusion is negative on {clamp_fraction:.2%} of the admissible interval "
            f"(limit {max_clamp_fraction:.2%})")

    def drift(s, t):
        return np.array([poly_basis(s[0]) @ th1])

    def diffusion(s, t):
        return np.array([[math.sqrt(max(0.0, poly_basis(s[0]) @ th2))]])

    return SdeSystem(1, 1, drift, diffusion, "polynomial",
                     {"theta1": th1.tolist(), "theta2": th2.tolist(),
                      "clamp_fraction": clamp_fraction}, box=(box[0], box[1]))


def clamp_rate(theta2, xs):
    """Fraction of ``xs`` where the fitted squared diffusion is negative."""
    xs = np.asarray(xs, dtype=float)
    if xs.size == 0:
        return 0.0
    return float(np.mean(poly_basis(xs) @ np.asarray(theta2, float) < 0))


# Step-size check -------------------------------------------------------------

@dataclass(frozen=True)
class TimestepCheck:
    ok: bool
    max_norm: float
    worst_state: np.ndarray


def drift_jacobian(system, x, t=0.0):
    """Central finite-difference Jacobian with per-coordinate step ``1e-6 (1 + |x_j|)``."""
    x = np.asarray(x, dtype=float)
    n = system.dim
    jac = np.empty((n, n))
    for j in range(n):
        h = 1e-6 * (1.0 + abs(x[j]))
        e = np.zeros(n)
        e[j] = h
        jac[:, j] = (system.f(x + e, t) - system.f(x - e, t)) / (2.0 * h)
    return jac


def check_timestep(system, probe_states, dt, t=0.0):
    """Is ``dt < 1 / max ||grad f||_2`` over the probe states?"""
    best = -1.0
    worst = None
    for x in np.atleast_2d(np.asarray(probe_states, dtype=float)):
        norm = float(np.linalg.norm(drift_jacobian(system, x, t), 2))
        if norm > best:
            best, worst = norm, x
    ok = best == 0.0 or dt < 1.0 / best
    return TimestepCheck(bool(ok), best, worst)


def box_probes(system, per_axis=21):
    lo, hi = system.box
    axes = [np.linspace(a, b, per_axis) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, system.dim)
