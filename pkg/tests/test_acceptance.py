"""The twelve acceptance criteria, one test each.

Every test prints (and records for the end-of-session summary) a single line
``[PASS|FAIL] criterion N: ...`` with the measured values and the runtime
against its budget, then asserts.  Run alone with::

    pytest tests/test_acceptance.py -v
"""

import filecmp
import itertools
import math
import os
import time

import numpy as np
import pytest

from sngrc import experiments as ex
from sngrc.cli import main
from sngrc.config import load_config
from sngrc.control import ModelPlant, closed_loop_run
from sngrc.eeg import SEIZURE_THETA1, surrogate_series
from sngrc.features import ridge_solve
from sngrc.metrics import kde
from sngrc.sde import TimeGrid, poly_basis, polynomial_sde, simulate
from sngrc.sysid import fit_sde, km_targets, lambda_max, lasso_fit, sparse_estimate

SEEDS = [0, 1, 2, 3, 4]


class Clock:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def verdict(log, number, ok, detail, clock=None, budget=None):
    in_time = True
    if budget is not None:
        in_time = clock.elapsed < budget
        detail = f"{detail}; runtime {clock.elapsed:.2f}s (budget {budget:g}s)"
    passed = bool(ok and in_time)
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    print(line)
    log.append(line)
    assert ok, line
    assert in_time, line


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(same_tree(os.path.join(a, d), os.path.join(b, d))
                                               for d in cmp.common_dirs)


# 1 ----------------------------------------------------------------------------

def test_criterion_01_model_space_closure(acceptance_log):
    cfg = load_config("vdp_low_noise")
    K = ex.gain(cfg, 2)
    with Clock() as clock:
        data = ex.vdp_data(cfg, 0)
        w = ex.vdp_train(cfg, data).weights
        # 51 logged steps give 50 transitions e_i -> e_(i+1); the start is pushed off the orbit
        log = closed_loop_run(ModelPlant(w, data.system), w, data.desired.states[:52], K, TimeGrid(0.01, 51), 7,
                              "oracle", history=data.original.states[:2] + 0.3)
        worst = max(float(np.linalg.norm(log.e[i + 1] - K.k @ log.e[i])) for i in range(50))
    ok = log.n_records == 51 and log.diverged_at is None and worst <= 1e-10
    verdict(acceptance_log, 1, ok, f"max ||e_(i+1) - K e_i|| over 50 steps = {worst:.2e} (<= 1e-10)", clock, 1.0)


# 2 ----------------------------------------------------------------------------

def test_criterion_02_low_noise_control(acceptance_log):
    cfg = load_config("vdp_low_noise")
    with Clock() as clock:
        runs = [ex.vdp_run(cfg, s).summary() for s in SEEDS]
    rmses = [r["total_rmse"] for r in runs]
    done = all(r["diverged_at"] is None for r in runs)
    med = float(np.median(rmses))
    verdict(acceptance_log, 2, done and med <= 0.3,
            f"median total RMSE {med:.4f} over {len(SEEDS)} seeds (<= 0.3; reference 0.1654)", clock, 30.0)


# 3 ----------------------------------------------------------------------------

def test_criterion_03_noise_feature_ablation(acceptance_log):
    cfg = load_config("vdp_compare")
    with Clock() as clock:
        conv_div, sto = 0, []
        steps = []
        for s in SEEDS:
            data = ex.vdp_data(cfg, s)
            st = ex.vdp_run(cfg, s, stochastic=True, data=data).summary()
            cv = ex.vdp_run(cfg, s, stochastic=False, data=data).summary()
            sto.append(st)
            if cv["diverged_at"] is not None:
                conv_div += 1
                steps.append(cv["diverged_at"])
    sto_done = all(r["diverged_at"] is None for r in sto)
    med = float(np.median([r["total_rmse"] for r in sto])) if sto_done else float("nan")
    ok = conv_div * 2 > len(SEEDS) and sto_done and med <= 0.7
    verdict(acceptance_log, 3, ok,
            f"conventional diverged in {conv_div}/{len(SEEDS)} seeds (steps {steps}); stochastic completed "
            f"{sum(r['diverged_at'] is None for r in sto)}/{len(SEEDS)}, median RMSE {med:.4f} (<= 0.7)",
            clock, 60.0)


# 4 ----------------------------------------------------------------------------

def test_criterion_04_multiplicative_noise(acceptance_log):
    cfg = load_config("vdp_multiplicative")
    with Clock() as clock:
        runs = [ex.vdp_run(cfg, s).summary() for s in SEEDS]
    done = sum(r["diverged_at"] is None for r in runs)
    med = float(np.median([r["total_rmse"] for r in runs]))
    verdict(acceptance_log, 4, done == len(SEEDS) and med <= 0.5,
            f"{done}/{len(SEEDS)} runs complete, median RMSE {med:.4f} (<= 0.5; reference 0.2359)", clock, 60.0)


# 5 ----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_05_robustness_sweep(acceptance_log):
    cfg = load_config("vdp_sweep")
    with Clock() as clock:
        grid = ex.run_sweep(cfg)
    n_cells = len(grid.cells)
    y_sigma2 = grid.cell(2.0, 0.1).stat("rmse_y")
    cells = [grid.cell(s, 0.1) for s in grid.sigma_values]
    y_over_x = all(c.stat("rmse_y") > c.stat("rmse_x") for c in cells)
    ok = n_cells == 12 and grid.repeats >= 5 and y_sigma2 > 1.0 and y_over_x
    verdict(acceptance_log, 5, ok,
            f"{n_cells} cells x R={grid.repeats}; eps=0.1, sigma=2 median Y RMSE {y_sigma2:.3f} (> 1.0); "
            f"Y > X in every eps=0.1 cell: {y_over_x}", clock, 600.0)


# 6 ----------------------------------------------------------------------------

def test_criterion_06_ridge(acceptance_log):
    with Clock() as clock:
        rng = np.random.default_rng(6)
        worst_res = 0.0
        design = rng.normal(size=(12, 400))
        w_true = rng.normal(size=(3, 12))
        w, res = ridge_solve(design, w_true @ design, 1e-12)
        planted_err = float(np.max(np.abs(w - w_true)))
        worst_res = max(worst_res, res)
        targets = rng.normal(size=(2, 400))
        norms = []
        for a in np.logspace(-10, 6, 40):
            wa, res = ridge_solve(design, targets, a)
            worst_res = max(worst_res, res)
            norms.append(np.linalg.norm(wa))
        monotone = all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))
        # the VdP training fits as well
        cfg = load_config("vdp_low_noise")
        for s in SEEDS[:2]:
            worst_res = max(worst_res, ex.vdp_train(cfg, ex.vdp_data(cfg, s)).weights.residual)
    ok = worst_res <= 1e-8 and planted_err <= 1e-6 and monotone
    verdict(acceptance_log, 6, ok,
            f"max normal-equation residual {worst_res:.1e} (<= 1e-8); planted map error {planted_err:.1e} "
            f"(<= 1e-6); monotone shrinkage: {monotone}", clock, 5.0)


# 7 ----------------------------------------------------------------------------

def _best_subset(design, y, size):
    best, best_rss = None, np.inf
    for cols in itertools.combinations(range(design.shape[1]), size):
        cols = list(cols)
        r = y - design[:, cols] @ np.linalg.lstsq(design[:, cols], y, rcond=None)[0]
        if r @ r < best_rss:
            best, best_rss = set(cols), float(r @ r)
    return best


def test_criterion_07_lasso(acceptance_log):
    with Clock() as clock:
        rng = np.random.default_rng(7)
        x = rng.uniform(-0.5, 0.5, 400)
        design = poly_basis(x, 3)
        theta = np.array([0.0, -2.0, 0.0, 0.5])
        y = design @ theta + 0.01 * rng.normal(size=400)
        ols = np.linalg.lstsq(design, y, rcond=None)[0]
        ols_err = float(np.max(np.abs(lasso_fit(design, y, 0.0, max_sweeps=200_000, tol=1e-14) - ols)))
        lam_max = lambda_max(design, y)
        null_ok = not lasso_fit(design, y, lam_max).any()
        truth = set(np.flatnonzero(theta))
        subset_ok = _best_subset(design, y, 2) == truth
        hits = [lam for lam in np.geomspace(lam_max, 1e-6, 80)
                if set(np.flatnonzero(sparse_estimate(design, y, lam)[0])) == truth]
    ok = ols_err <= 1e-8 and null_ok and subset_ok and bool(hits)
    span = f"[{min(hits):.2e}, {max(hits):.2e}]" if hits else "none"
    verdict(acceptance_log, 7, ok,
            f"lambda=0 vs OLS {ols_err:.1e} (<= 1e-8); lambda_max zeroes all: {null_ok}; support "
            f"{{x, x^3}} recovered for lambda in {span}, matches best subset: {subset_ok}", clock, 10.0)


# 8 ----------------------------------------------------------------------------

def test_criterion_08_kramers_moyal(acceptance_log):
    with Clock() as clock:
        dt = 0.05
        ou = polynomial_sde([0.0, -1.0, 0.0, 0.0], [0.25, 0.0, 0.0, 0.0])
        x = simulate(ou, [0.0], TimeGrid(dt, 100_000), seed=8).states[:, 0]
        km = km_targets(x, dt)
        edges = np.quantile(km.states, np.linspace(0.05, 0.95, 19))
        idx = np.digitize(km.states, edges)
        centers = [km.states[idx == b].mean() for b in range(1, len(edges))]
        means = [km.drift[idx == b].mean() for b in range(1, len(edges))]
        slope = float(np.polyfit(centers, means, 1)[0])
        s_mean = float(km.diffusion.mean())
    ok = abs(slope + 1) <= 0.05 and abs(s_mean - 0.25) <= 0.02
    verdict(acceptance_log, 8, ok,
            f"binned drift slope {slope:.4f} (-1 +- 0.05); mean diffusion target {s_mean:.4f} (0.25 +- 0.02)",
            clock, 30.0)


# 9 ----------------------------------------------------------------------------

def test_criterion_09_surrogate_identification(acceptance_log):
    with Clock() as clock:
        fits = [fit_sde(surrogate_series(s), 0.0625) for s in SEEDS]
    supports = [f.drift_support() for f in fits]
    exact = sum(sup == ["x"] for sup in supports)
    coef = float(np.median([f.theta1[1] for f in fits]))
    target = SEIZURE_THETA1[1]
    ok = exact * 2 > len(SEEDS) and abs(coef - target) <= 0.25 * abs(target)
    verdict(acceptance_log, 9, ok,
            f"drift support {{x}} in {exact}/{len(SEEDS)} seeds; median x-coefficient {coef:.4f} "
            f"(within 25% of {target})", clock, 30.0)


# 10 ---------------------------------------------------------------------------

def test_criterion_10_eeg_pipeline(acceptance_log):
    cfg = load_config("eeg_surrogate")
    with Clock() as clock:
        runs = [ex.eeg_run(cfg, s, ex.eeg_series(cfg, s)).summary() for s in SEEDS]
    done = all(r["diverged_at"] is None for r in runs)
    med = float(np.median([r["phase_c_rmse"] for r in runs]))
    iqr_c = float(np.median([r["iqr"]["controlled"] for r in runs]))
    iqr_o = float(np.median([r["iqr"]["original"] for r in runs]))
    per_seed = sum(r["iqr"]["controlled"] < r["iqr"]["original"] for r in runs)
    ok = done and med <= 0.2 and iqr_c < iqr_o
    verdict(acceptance_log, 10, ok,
            f"median phase C RMSE {med:.4f} (<= 0.2; reference 0.0752); median IQR controlled {iqr_c:.4f} "
            f"< original {iqr_o:.4f} (per seed {per_seed}/{len(SEEDS)})", clock, 60.0)


# 11 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_11_determinism(acceptance_log, tmp_path):
    commands = [("simulate", "vdp_low_noise"), ("train", "vdp_low_noise"), ("control", "vdp_low_noise"),
                ("compare", "vdp_compare"), ("sweep", "vdp_sweep"), ("identify", "eeg_surrogate"),
                ("eeg-pipeline", "eeg_surrogate")]
    identical = []
    with Clock() as clock:
        for cmd, preset in commands:
            outs = []
            for rep in ("a", "b"):
                out = tmp_path / cmd / rep
                main([cmd, "--config", preset, "--out", str(out), "--seed", "0"])
                outs.append(out)
            identical.append(same_tree(*outs))
    bad = [c for (c, _), same in zip(commands, identical) if not same]
    verdict(acceptance_log, 11, not bad,
            f"{sum(identical)}/{len(commands)} commands reproduce byte-identical outputs"
            + (f"; differing: {bad}" if bad else ""), clock, None)


# 12 ---------------------------------------------------------------------------

def test_criterion_12_kde_normalization(acceptance_log):
    with Clock() as clock:
        rng = np.random.default_rng(12)
        integrals = []
        for _ in range(100):
            n = int(rng.integers(2, 500))
            kind = rng.integers(3)
            x = (rng.normal(size=n), rng.standard_t(2, size=n), rng.exponential(size=n))[kind]
            integrals.append(kde(x * rng.uniform(0.01, 100)).integral())
        peak = kde(rng.normal(size=100_000), grid=np.array([0.0])).density[0]
    ref = 1 / math.sqrt(2 * math.pi)
    ok = min(integrals) >= 0.99 and max(integrals) <= 1.01 and abs(peak - ref) <= 0.05 * ref
    verdict(acceptance_log, 12, ok,
            f"integrals in [{min(integrals):.5f}, {max(integrals):.5f}] over 100 sets ([0.99, 1.01]); "
            f"N(0,1) peak {peak:.4f} vs {ref:.4f} ({abs(peak / ref - 1) * 100:.2f}% <= 5%)", clock, None)
