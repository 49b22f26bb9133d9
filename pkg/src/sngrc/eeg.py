"""EEG-style input: CSV ingestion, normalization + block-average downsampling, and a surrogate generator.

The surrogate integrates the sparse scalar SDE identified from seizure EEG
(drift ``-5.8878 x``, squared diffusion ``-0.1150 x + 4.0277 x^2 + 0.0375 x^3``)
at the processed resolution ``dt = 0.0625``.  That SDE alone collapses to
``x = 0`` because its diffusion vanishes there, so the surrogate adds a
constant squared-diffusion floor that switches from a quiet (rest) to a loud
(seizure) regime at sample 600.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import BadInput
from .io import write_csv
from .sde import NoiseDraw, derive_seed, philox, poly_basis

SEIZURE_THETA1 = (0.0, -5.8878, 0.0, 0.0)
SEIZURE_THETA2 = (0.0, -0.1150, 4.0277, 0.0375)
EEG_DT = 0.0625
BLOCK = 16


@dataclass(frozen=True)
class EegSeries:
    channels: np.ndarray  # raw samples, rows = time
    rate: float
    channel: int
    processed: np.ndarray
    block: int = BLOCK

    @property
    def dt(self):
        """Processed-sample spacing in the model's time units (fixed, not ``block / rate``)."""
        return EEG_DT


def read_eeg_csv(path):
    """Numeric CSV, one row per sample and one column per channel.

    A non-numeric first row is treated as a header and skipped.
    """
    rows = []
    try:
        with open(path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    except OSError as exc:
        raise BadInput(f"cannot read {path}: {exc}") from exc
    for k, line in enumerate(lines):
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError:
            if k == 0:
                continue
            raise BadInput(f"{path}: non-numeric value on data line {k + 1}") from None
    if not rows:
        raise BadInput(f"{path}: no data rows")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise BadInput(f"{path}: ragged rows (expected {width} columns)")
    data = np.array(rows, dtype=float)
    if not np.all(np.isfinite(data)):
        raise BadInput(f"{path}: non-finite values")
    return data


def normalize(x, mode="maxabs"):
    """Map a channel into [-0.5, 0.5].

    ``"maxabs"`` divides by ``2 max|x|`` and keeps 0 fixed; ``"minmax"`` maps
    the range affinely onto the full interval.  A constant channel maps to zeros.
    """
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        warnings.warn("constant channel; processed series is all zeros", RuntimeWarning, stacklevel=2)
        return np.zeros_like(x)
    if mode == "maxabs":
        return x / (2.0 * np.max(np.abs(x)))
    if mode == "minmax":
        lo, hi = x.min(), x.max()
        return np.clip((x - lo) / (hi - lo) - 0.5, -0.5, 0.5)
    raise ValueError(f"unknown normalization {mode!r}")


def block_average(x, block=BLOCK):
    """Mean of consecutive non-overlapping blocks; a trailing partial block is dropped."""
    x = np.asarray(x, dtype=float)
    m = x.size // block
    return x[:m * block].reshape(m, block).mean(axis=1)


def preprocess(channels, channel=0, rate=256.0, block=BLOCK, mode="maxabs", min_samples=100):
    data = np.asarray(channels, dtype=float)
    if data.ndim == 1:
        data = data[:, None]
    if not 0 <= channel < data.shape[1]:
        raise BadInput(f"channel {channel} out of range (file has {data.shape[1]} channels)")
    processed = block_average(normalize(data[:, channel], mode), block)
    if processed.size < min_samples:
        raise BadInput(f"only {processed.size} processed samples (need at least {min_samples})")
    return EegSeries(data, float(rate), int(channel), processed, int(block))


# Surrogate -----------------------------------------------------------------

def surrogate_series(seed, n_samples=1500, dt=EEG_DT, switch=600, noise_floor=(0.009, 0.125),
                     theta1=SEIZURE_THETA1, theta2=SEIZURE_THETA2, x0=0.0):
    """Processed-resolution surrogate: Euler-Maruyama on the identified SDE plus a regime noise floor.

    ``g^2(x) = max(0, theta2 . B(x)) + c``, with ``c = noise_floor[0]`` before
    sample ``switch`` and ``noise_floor[1]`` from then on.
    """
    th1 = np.asarray(theta1, float)
    th2 = np.asarray(theta2, float)
    xi = NoiseDraw(int(seed), n_samples - 1, 1).stream[:, 0]
    x = np.empty(n_samples)
    x[0] = x0
    sq = math.sqrt(dt)
    for i in range(n_samples - 1):
        b = poly_basis(x[i])
        g2 = max(0.0, float(b @ th2)) + (noise_floor[0] if i < switch else noise_floor[1])
        x[i + 1] = x[i] + float(b @ th1) * dt + math.sqrt(g2) * sq * xi[i]
    return x


def surrogate_raw(seed, n_samples=1500, channels=4, block=BLOCK, raw_scale=100.0, jitter=0.02, **kw):
    """Raw multi-channel recording whose channel 0 block-averages back to a scaled surrogate.

    Each processed sample is spread over ``block`` raw samples with zero-mean
    within-block jitter; the other channels are independent surrogates.
    """
    rng = philox(derive_seed(seed, "eeg-jitter"))
    cols = []
    for c in range(channels):
        s = surrogate_series(derive_seed(seed, f"eeg-channel-{c}"), n_samples, **kw)
        half = rng.normal(0.0, jitter, size=(n_samples, block // 2))
        wiggle = np.concatenate([half, -half], axis=1)  # zero mean within each block
        cols.append((raw_scale * (s[:, None] + wiggle)).ravel())
    return np.stack(cols, axis=1)


def write_surrogate_csv(path, seed, **kw):
    data = surrogate_raw(seed, **kw)
    write_csv(path, [f"ch{c}" for c in range(data.shape[1])], data)
    return data
