"""``sngrc`` command-line entry point.

Every command resolves its config (file or preset name), applies ``--seed`` /
``--repeats``, writes ``config.resolved.yaml`` into ``--out`` and tags each CSV
with the config hash and seed.  Per-seed outputs go to ``<out>/seed-<s>/``.

Exit codes: 0 success, 2 divergence detected, 3 bad input, 4 numerical failure.
"""

import argparse
import logging
import os
import sys
import warnings

import numpy as np

from . import experiments as ex
from .config import config_hash, dump_config, load_config, with_seeds
from .eeg import surrogate_raw
from .errors import (BadInput, ClampRejected, IntegrationBlowup, RankDeficientInputGain, SingularFitError,
                     SngrcError)
from .features import WeightBlocks
from .io import atomic_write_text, write_csv, write_json
from .metrics import SWEEP_HEADER
from .sde import Trajectory

log = logging.getLogger("sngrc")

EXIT_OK, EXIT_DIVERGED, EXIT_BAD_INPUT, EXIT_NUMERICAL = 0, 2, 3, 4


class Run:
    """Output bookkeeping shared by all commands."""

    def __init__(self, command, cfg, out):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.hash = config_hash(cfg)
        os.makedirs(out, exist_ok=True)
        atomic_write_text(os.path.join(out, "config.resolved.yaml"), dump_config(cfg))

    def path(self, seed, *parts):
        if seed is None:
            return os.path.join(self.out, *parts)
        return os.path.join(self.out, f"seed-{seed}", *parts)

    def tags(self, seed):
        return [f"command={self.command}", f"config_sha256={self.hash}", f"seed={seed}"]

    def meta(self, seed=None):
        m = {"command": self.command, "config_sha256": self.hash}
        if seed is not None:
            m["seed"] = seed
        return m

    def csv(self, seed, name, header, rows):
        write_csv(self.path(seed, name), header, rows, self.tags(seed))

    def json(self, seed, name, obj):
        write_json(self.path(seed, name), {**self.meta(seed), **obj})


def _median(values):
    vals = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.median(vals)) if vals else float("nan")


def _write_log(run, seed, sub, logobj, extra=None):
    logobj.write(run.path(seed, *sub, "control.csv"), run.path(seed, *sub, "control_summary.json"),
                 run.tags(seed), {**run.meta(seed), **(extra or {})})


# Commands -------------------------------------------------------------------

def cmd_simulate(run, args):
    cfg = run.cfg
    discard = int(cfg["grid"]["discard"])
    summaries = []
    for seed in cfg["seeds"]:
        data = ex.vdp_data(cfg, seed)
        for name, traj in (("original", data.original), ("perturbed", data.perturbed)):
            traj.window(discard).to_csv(run.path(seed, f"{name}.csv"), run.tags(seed))
        des = data.desired
        rows = np.hstack([des.t0 + np.arange(len(des))[:, None] * des.dt, des.states])
        run.csv(seed, "desired.csv", ["t"] + [f"x{j + 1}" for j in range(des.states.shape[1])], rows)
        run.csv(seed, "perturbation.csv", [f"u{j + 1}" for j in range(data.perturbation.shape[1])],
                data.perturbation)
        summaries.append({"seed": seed, "x0": data.original.states[0].tolist(),
                          "display_rows": data.original.n_steps + 1 - discard})
    write_json(run.path(None, "summary.json"), {**run.meta(), "runs": summaries})
    return EXIT_OK


def cmd_train(run, args):
    cfg = run.cfg
    reports = []
    for seed in cfg["seeds"]:
        if args.trajectory:
            traj = Trajectory.from_csv(args.trajectory).with_increments(ex.make_system(cfg["system"]))
            tr = ex.train(cfg, traj, int(cfg["training"]["n_train"]))
        else:
            tr = ex.vdp_train(cfg, ex.vdp_data(cfg, seed))
        tr.weights.save(run.path(seed, "weights.csv"))
        rep = {**tr.report(), "reference_alpha": cfg["reference"]["low_noise_alpha"],
               "reference_test_rmse": cfg["reference"]["low_noise_test_rmse"]}
        run.json(seed, "train_report.json", rep)
        reports.append({"seed": seed, "alpha": tr.weights.alpha, "test_rmse": tr.test_rmse})
        log.info("seed %s: alpha=%.3g test RMSE=%.3g", seed, tr.weights.alpha, tr.test_rmse)
    write_json(run.path(None, "summary.json"),
               {**run.meta(), "runs": reports, "median_test_rmse": _median([r["test_rmse"] for r in reports])})
    return EXIT_OK


def cmd_control(run, args):
    cfg = run.cfg
    fixed = WeightBlocks.load(args.weights) if args.weights else None
    rows = []
    for seed in cfg["seeds"]:
        data = ex.vdp_data(cfg, seed)
        if fixed is None:
            res = ex.vdp_run(cfg, seed, data=data)
            logobj, summary = res.log, res.summary()
        else:
            logobj = ex.vdp_control(cfg, data, fixed, seed)
            summary = {**logobj.summary(), "seed": seed, "alpha": fixed.alpha}
        _write_log(run, seed, (), logobj)
        rows.append(summary)
        log.info("seed %s: RMSE=%.4f max|u|=%.1f diverged_at=%s", seed, summary["total_rmse"],
                 summary["max_abs_u"], summary["diverged_at"])
    diverged = [r["seed"] for r in rows if r["diverged_at"] is not None]
    ok = [r for r in rows if r["diverged_at"] is None]
    write_json(run.path(None, "summary.json"), {
        **run.meta(), "runs": rows, "diverged_seeds": diverged,
        "median_total_rmse": _median([r["total_rmse"] for r in ok]),
        "median_rmse_x": _median([r.get("rmse_x") for r in ok]),
        "median_rmse_y": _median([r.get("rmse_y") for r in ok]),
        "max_abs_u": max((r["max_abs_u"] for r in ok), default=float("nan"))})
    return EXIT_DIVERGED if diverged else EXIT_OK


def cmd_compare(run, args):
    cfg = run.cfg
    rows = []
    for seed in cfg["seeds"]:
        data = ex.vdp_data(cfg, seed)
        pair = {"seed": seed}
        for arm, stochastic in (("stochastic", True), ("conventional", False)):
            res = ex.vdp_run(cfg, seed, stochastic=stochastic, data=data)
            run.csv(seed, os.path.join(arm, "perturbation.csv"),
                    [f"u{j + 1}" for j in range(data.perturbation.shape[1])], data.perturbation)
            _write_log(run, seed, (arm,), res.log, {"training_data_sha256": res.training.checksum})
            s = res.summary()
            pair[arm] = {"total_rmse": s["total_rmse"], "diverged_at": s["diverged_at"],
                         "max_abs_u": s["max_abs_u"], "alpha": s["alpha"], "test_rmse": s["test_rmse"],
                         "training_data_sha256": res.training.checksum}
        pair["same_training_data"] = (pair["stochastic"]["training_data_sha256"]
                                      == pair["conventional"]["training_data_sha256"])
        rows.append(pair)
        log.info("seed %s: stochastic RMSE=%.4f (diverged_at=%s), conventional diverged_at=%s", seed,
                 pair["stochastic"]["total_rmse"], pair["stochastic"]["diverged_at"],
                 pair["conventional"]["diverged_at"])
    conv_div = sum(r["conventional"]["diverged_at"] is not None for r in rows)
    sto_div = sum(r["stochastic"]["diverged_at"] is not None for r in rows)
    write_json(run.path(None, "summary.json"), {
        **run.meta(), "runs": rows, "n_seeds": len(rows),
        "conventional_diverged": conv_div, "stochastic_diverged": sto_div,
        "conventional_majority_diverged": conv_div * 2 > len(rows),
        "median_stochastic_rmse": _median([r["stochastic"]["total_rmse"] for r in rows
                                           if r["stochastic"]["diverged_at"] is None]),
        "median_conventional_rmse": _median([r["conventional"]["total_rmse"] for r in rows
                                             if r["conventional"]["diverged_at"] is None])})
    return EXIT_DIVERGED if sto_div else EXIT_OK


def cmd_sweep(run, args):
    cfg = run.cfg
    if args.workers is not None:
        cfg = {**cfg, "sweep": {**cfg["sweep"], "workers": args.workers}}
    grid = ex.run_sweep(cfg)
    tags = run.tags(cfg["seeds"])
    write_csv(run.path(None, "heatmap.csv"), SWEEP_HEADER, grid.table("median"), tags + ["statistic=median"])
    write_csv(run.path(None, "heatmap_mean.csv"), SWEEP_HEADER, grid.table("mean"), tags + ["statistic=mean"])
    cells = [{"sigma": c.sigma, "eps": c.eps, "n_diverged": c.n_diverged, "runs": list(c.runs)}
             for c in grid.cells.values()]
    write_json(run.path(None, "sweep_runs.json"), {**run.meta(), "seeds": cfg["seeds"], "cells": cells})
    return EXIT_OK


def _identify_outputs(run, seed, ident, series_x, dt):
    fit = ident.fit
    run.json(seed, "fit.json", {**fit.to_dict(), "dt": dt, "drift_support": fit.drift_support(),
                                "diffusion_support": fit.diffusion_support(),
                                "rmse_drift_train": ident.train_eval.rmse_drift,
                                "rmse_diffusion_train": ident.train_eval.rmse_diffusion,
                                "rmse_drift_test": ident.test_eval.rmse_drift if ident.test_eval else None,
                                "rmse_diffusion_test": ident.test_eval.rmse_diffusion if ident.test_eval else None,
                                "reference_alpha": run.cfg["reference"]["eeg_alpha"],
                                "reference_beta": run.cfg["reference"]["eeg_beta"]})
    t = np.arange(series_x.size) * dt
    run.csv(seed, "processed.csv", ["t", "x"], np.column_stack([t, series_x]))
    for name, attr, pred in (("drift", "drift", "drift_pred"), ("diffusion", "diffusion", "diffusion_pred")):
        parts = [(ident.km_train, getattr(ident.train_eval, pred), 0.0)]
        if ident.km_test is not None:
            parts.append((ident.km_test, getattr(ident.test_eval, pred), 1.0))
        rows = np.vstack([np.column_stack([km.states, getattr(km, attr), p, np.full(km.states.size, flag)])
                          for km, p, flag in parts])
        run.csv(seed, f"fit_{name}.csv", ["x", "target", "predicted", "test"], rows)
        grid, kdes = ex.shared_kde({"target": rows[:, 1], "predicted": rows[:, 2]}) \
            if np.ptp(rows[:, 2]) > 0 else ex.shared_kde({"target": rows[:, 1]})
        cols = [grid] + [d.density for d in kdes.values()]
        run.csv(seed, f"kde_{name}.csv", ["x"] + [f"density_{k}" for k in kdes], np.column_stack(cols))


def cmd_identify(run, args):
    cfg = run.cfg
    seeds = cfg["seeds"][:1] if args.csv else cfg["seeds"]
    rows = []
    for seed in seeds:
        series = ex.eeg_series(cfg, seed, args.csv)
        ident = ex.identify(cfg, series)
        _identify_outputs(run, seed, ident, series.processed, float(cfg["eeg"]["dt"]))
        rows.append({"seed": seed, "drift_support": ident.fit.drift_support(),
                     "diffusion_support": ident.fit.diffusion_support(),
                     "theta1": ident.fit.theta1.tolist(), "theta2": ident.fit.theta2.tolist(),
                     "alpha": ident.fit.alpha, "beta": ident.fit.beta})
        log.info("seed %s: drift support %s, diffusion support %s", seed, rows[-1]["drift_support"],
                 rows[-1]["diffusion_support"])
    write_json(run.path(None, "summary.json"), {**run.meta(), "dt": float(cfg["eeg"]["dt"]),
                                                "source": args.csv or "surrogate", "runs": rows})
    return EXIT_OK


def cmd_eeg_pipeline(run, args):
    cfg = run.cfg
    rows = []
    for seed in cfg["seeds"]:
        series = ex.eeg_series(cfg, seed, args.csv)
        res = ex.eeg_run(cfg, seed, series)
        _identify_outputs(run, seed, res.identification, series.processed, float(cfg["eeg"]["dt"]))
        res.perturbed.to_csv(run.path(seed, "phase_a_perturbed.csv"), run.tags(seed))
        run.json(seed, "phase_b_report.json", {**res.training.report(),
                                               "reference_validation_rmse": cfg["reference"]["eeg_phase_b_rmse"]})
        _write_log(run, seed, (), res.log, {"reference_phase_c_rmse": cfg["reference"]["eeg_phase_c_rmse"]})
        run.csv(seed, "kde.csv", ["x"] + [f"density_{k}" for k in res.kdes],
                np.column_stack([res.kde_grid] + [d.density for d in res.kdes.values()]))
        rows.append(res.summary())
        log.info("seed %s: phase B RMSE=%.3g, phase C RMSE=%.4f", seed, rows[-1]["phase_b_validation_rmse"],
                 rows[-1]["phase_c_rmse"])
    diverged = [r["seed"] for r in rows if r["diverged_at"] is not None]
    med_iqr = {k: _median([r["iqr"][k] for r in rows]) for k in ("desired", "controlled", "original")}
    write_json(run.path(None, "summary.json"), {
        **run.meta(), "source": args.csv or "surrogate", "runs": rows, "diverged_seeds": diverged,
        "median_phase_b_validation_rmse": _median([r["phase_b_validation_rmse"] for r in rows]),
        "median_phase_c_rmse": _median([r["phase_c_rmse"] for r in rows]), "median_iqr": med_iqr,
        "controlled_iqr_below_original": med_iqr["controlled"] < med_iqr["original"]})
    return EXIT_DIVERGED if diverged else EXIT_OK


def cmd_surrogate(run, args):
    cfg = run.cfg
    s, e = cfg["eeg"]["surrogate"], cfg["eeg"]
    for seed in cfg["seeds"]:
        data = surrogate_raw(seed, n_samples=int(s["n_samples"]), channels=int(s["channels"]),
                             block=int(e["block"]), raw_scale=float(s["raw_scale"]), jitter=float(s["jitter"]),
                             switch=int(s["switch"]), noise_floor=tuple(s["noise_floor"]), dt=float(e["dt"]))
        run.csv(seed, "eeg_surrogate.csv", [f"ch{c}" for c in range(data.shape[1])], data)
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "original / perturbed / desired trajectories"),
    "train": (cmd_train, "fit NG-RC weights with alpha selection"),
    "control": (cmd_control, "closed-loop tracking runs"),
    "compare": (cmd_compare, "conventional vs stochastic NG-RC on identical data"),
    "sweep": (cmd_sweep, "sigma x eps robustness grid"),
    "identify": (cmd_identify, "Kramers-Moyal + Lasso SDE identification from EEG-style CSV"),
    "eeg-pipeline": (cmd_eeg_pipeline, "identify, perturb, train and control on EEG-style data"),
    "surrogate": (cmd_surrogate, "write the bundled surrogate EEG as raw CSV"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="sngrc", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="YAML config file or preset name")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, help="first seed (single seed unless --repeats is given)")
        p.add_argument("--repeats", type=int, help="number of consecutive seeds")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "train":
            p.add_argument("--trajectory", help="perturbed trajectory CSV (default: regenerate from config)")
        if name == "control":
            p.add_argument("--weights", help="weights CSV from `sngrc train` (default: train per seed)")
        if name == "sweep":
            p.add_argument("--workers", type=int, help="parallel worker processes")
        if name in ("identify", "eeg-pipeline"):
            p.add_argument("--csv", help="EEG CSV, one row per sample (default: bundled surrogate)")
            p.add_argument("--channel", type=int, help="channel column (default from config)")
            p.add_argument("--rate", type=float, help="sample rate in Hz (default 256)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    warnings.simplefilter("default")
    func = COMMANDS[args.command][0]
    try:
        overrides = {}
        eeg = {k: getattr(args, k) for k in ("channel", "rate") if getattr(args, k, None) is not None}
        if eeg:
            overrides["eeg"] = eeg
        cfg = with_seeds(load_config(args.config, overrides), args.seed, args.repeats)
        run = Run(args.command, cfg, args.out)
        return func(run, args)
    except ex.PhaseError as exc:
        print(f"sngrc {args.command}: {exc}", file=sys.stderr)
        if isinstance(exc.cause, BadInput):
            return EXIT_BAD_INPUT
        return EXIT_DIVERGED if isinstance(exc.cause, IntegrationBlowup) else EXIT_NUMERICAL
    except IntegrationBlowup as exc:
        print(f"sngrc {args.command}: divergence at step {exc.step}", file=sys.stderr)
        return EXIT_DIVERGED
    except (SingularFitError, RankDeficientInputGain, ClampRejected) as exc:
        print(f"sngrc {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (BadInput, ValueError, OSError) as exc:
        print(f"sngrc {args.command}: bad input: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except (SngrcError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"sngrc {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
