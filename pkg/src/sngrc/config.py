"""Experiment configuration: YAML files layered over built-in defaults.

A config file may name a base with ``defaults: <preset name or path>``; the
chain is resolved recursively and merged key by key (mappings merge, every other
value replaces).  The fully resolved mapping is what every run records.
"""

import copy
import os
from importlib import resources

import yaml

from .errors import BadInput
from .io import sha256_of

# Published values for single realizations of each experiment.  Echoed in reports, never asserted.
REFERENCE_VALUES = {
    "low_noise_test_rmse": 2.2412e-6,
    "low_noise_alpha": 7.7426e-7,
    "low_noise_control_rmse": 0.1654,
    "compare_stochastic_rmse": 0.3632,
    "compare_conventional_divergence_step": 302,
    "compare_control_band": 160.0,
    "multiplicative_control_rmse": 0.2359,
    "eeg_alpha": 0.0012,
    "eeg_beta": 1e-5,
    "eeg_phase_b_rmse": 0.1331,
    "eeg_phase_c_rmse": 0.0752,
    "eeg_ngrc_alpha": 0.1931,
}

DEFAULTS = {
    "experiment": "vdp",
    "system": {"kind": "vdp_additive", "eps": 1.0, "sigma1": 0.1, "sigma2": 0.1},
    "grid": {"dt": 0.01, "n_samples": 2000, "discard": 500, "x0_range": [-2.0, 2.0], "bound": 1e6},
    "features": {"delay": 1, "poly_degrees": [2, 3], "include_constant": True},
    "training": {
        "amplitude": 1.0,
        "hold": 10,
        "n_train": 1000,
        "alpha": None,
        "alpha_grid": {"log10_min": -10.0, "log10_max": 1.0, "num": 45},
        "holdout_fraction": 0.2,
    },
    "controller": {
        "gain": 0.5,
        "events": [[0, 1.2], [700, 0.8], [1100, 0.5]],
        "center": "tail_mean",
        "etc_mode": "event",
        "trigger_threshold": 0.2,
        "noise_policy": "zero",
    },
    "seeds": [0, 1, 2, 3, 4],
    "sweep": {"sigma": [0.0, 0.5, 1.0, 2.0], "eps": [1.0, 0.5, 0.1], "sigma2_ratio": 2.0, "workers": 1},
    "eeg": {
        "rate": 256.0,
        "channel": 0,
        "block": 16,
        "dt": 0.0625,
        "normalization": "maxabs",
        "min_samples": 100,
        "fit_samples": 1200,
        "kfolds": 5,
        "relaxed": True,
        "desired": [0, 500],
        "original": [500, 1000],
        "perturb_steps": 400,
        "train_steps": 200,
        "control_start": 400,
        "control_steps": 100,
        "surrogate": {"n_samples": 1500, "switch": 600, "noise_floor": [0.009, 0.125], "channels": 4,
                      "raw_scale": 100.0, "jitter": 0.02},
    },
    "reference": REFERENCE_VALUES,
}


def deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def preset_names():
    files = resources.files("sngrc").joinpath("presets").iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".yaml"))


def _read_yaml(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise BadInput(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise BadInput(f"config {path} is not valid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise BadInput(f"config {path} must be a mapping")
    return data


def _locate(name, relative_to=None):
    if os.path.sep in name or name.endswith((".yaml", ".yml")):
        path = name if os.path.isabs(name) or relative_to is None else os.path.join(relative_to, name)
        return path
    ref = resources.files("sngrc").joinpath("presets").joinpath(f"{name}.yaml")
    if not ref.is_file():
        raise BadInput(f"unknown preset {name!r} (available: {', '.join(preset_names())})")
    return str(ref)


def _resolve(path, seen):
    path = os.path.abspath(path)
    if path in seen:
        raise BadInput(f"config defaults chain loops through {path}")
    data = _read_yaml(path)
    parent = data.pop("defaults", None)
    if parent is None:
        return data
    base = _resolve(_locate(str(parent), os.path.dirname(path)), seen | {path})
    return deep_merge(base, data)


def load_config(source=None, overrides=None):
    """Resolve a config file, preset name or mapping over :data:`DEFAULTS`."""
    if source is None:
        layered = {}
    elif isinstance(source, dict):
        layered = copy.deepcopy(source)
        parent = layered.pop("defaults", None)
        if parent is not None:
            layered = deep_merge(_resolve(_locate(str(parent)), frozenset()), layered)
    else:
        layered = _resolve(_locate(os.fspath(source)), frozenset())
    cfg = deep_merge(DEFAULTS, layered)
    cfg = deep_merge(cfg, overrides)
    validate(cfg)
    return cfg


def validate(cfg):
    kinds = ("vdp_additive", "vdp_multiplicative")
    if cfg["system"]["kind"] not in kinds:
        raise BadInput(f"system.kind must be one of {kinds}")
    if not cfg["grid"]["dt"] > 0:
        raise BadInput("grid.dt must be positive")
    if not isinstance(cfg["seeds"], list) or not cfg["seeds"]:
        raise BadInput("seeds must be a non-empty list")
    events = cfg["controller"]["events"]
    if any(len(ev) != 2 for ev in events):
        raise BadInput("controller.events entries are [step, factor] pairs")
    if cfg["controller"]["etc_mode"] not in ("event", "continuous"):
        raise BadInput("controller.etc_mode must be 'event' or 'continuous'")
    if cfg["controller"]["noise_policy"] not in ("zero", "oracle", "residual"):
        raise BadInput("controller.noise_policy must be zero, oracle or residual")
    if cfg["eeg"]["normalization"] not in ("maxabs", "minmax"):
        raise BadInput("eeg.normalization must be 'maxabs' or 'minmax'")


def with_seeds(cfg, seed=None, repeats=None):
    """Apply the ``--seed`` / ``--repeats`` command-line overrides."""
    cfg = copy.deepcopy(cfg)
    if seed is not None or repeats is not None:
        start = int(seed) if seed is not None else int(cfg["seeds"][0])
        count = int(repeats) if repeats is not None else (1 if seed is not None else len(cfg["seeds"]))
        if count < 1:
            raise BadInput("--repeats must be >= 1")
        cfg["seeds"] = list(range(start, start + count))
    return cfg


def config_hash(cfg):
    return sha256_of(cfg)


def dump_config(cfg):
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)
