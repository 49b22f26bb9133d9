import filecmp
import json
import os

import numpy as np
import pytest
import yaml

from sngrc.cli import main
from sngrc.config import config_hash, load_config
from sngrc.io import read_csv
from sngrc.sde import TimeGrid, Trajectory

SEED0 = ["--seed", "0"]


def run(cmd, config, out, *extra):
    return main([cmd, "--config", str(config), "--out", str(out), *extra])


def write_config(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


def same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(same_tree(os.path.join(a, d), os.path.join(b, d))
                                               for d in cmp.common_dirs)


# simulate ---------------------------------------------------------------------

def test_simulate_display_rows_and_inputs(tmp_path):
    assert run("simulate", "vdp_low_noise", tmp_path / "o", *SEED0) == 0
    seed_dir = tmp_path / "o" / "seed-0"
    _, orig, comments = read_csv(seed_dir / "original.csv")
    _, pert, _ = read_csv(seed_dir / "perturbed.csv")
    assert orig.shape[0] == pert.shape[0] == 1500
    header = read_csv(seed_dir / "perturbed.csv")[0]
    u_cols = [j for j, h in enumerate(header) if h.startswith("u")]
    # the final state has no input row, stored as nan
    assert np.any(pert[:-1, u_cols] != 0) and not np.any(orig[:-1, u_cols])
    cfg = load_config("vdp_low_noise", None)
    assert any(c == f"config_sha256={config_hash({**cfg, 'seeds': [0]})}" for c in comments)
    assert "seed=0" in comments


def test_zero_noise_simulation_is_reproducible(tmp_path):
    cfg = write_config(tmp_path, {"system": {"sigma1": 0.0, "sigma2": 0.0}})
    assert run("simulate", cfg, tmp_path / "a", *SEED0) == 0
    assert run("simulate", cfg, tmp_path / "b", *SEED0) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")


def test_config_round_trip(tmp_path):
    assert run("simulate", "vdp_compare", tmp_path / "o", *SEED0) == 0
    resolved = tmp_path / "o" / "config.resolved.yaml"
    back = load_config(str(resolved))
    assert back == yaml.safe_load(resolved.read_text())
    assert back["system"]["sigma2"] == 2.0 and back["seeds"] == [0]


# train / control ------------------------------------------------------------------

def test_train_then_control_with_saved_weights(tmp_path):
    assert run("train", "vdp_low_noise", tmp_path / "t", *SEED0) == 0
    rep = load_json(tmp_path / "t" / "seed-0" / "train_report.json")
    assert rep["test_rmse"] < 1e-3
    assert rep["reference_alpha"] == pytest.approx(7.7426e-7)
    weights = tmp_path / "t" / "seed-0" / "weights.csv"
    assert run("control", "vdp_low_noise", tmp_path / "c", *SEED0, "--weights", str(weights)) == 0
    s = load_json(tmp_path / "c" / "seed-0" / "control_summary.json")
    for key in ("total_rmse", "rmse_x", "rmse_y", "max_abs_u", "diverged_at"):
        assert key in s
    header, rows, _ = read_csv(tmp_path / "c" / "seed-0" / "control.csv")
    assert header == ["t", "x1", "x2", "xdes1", "xdes2", "u1", "u2", "e1", "e2"]
    np.testing.assert_array_equal(rows[:, 7:9], rows[:, 1:3] - rows[:, 3:5])


def test_train_on_constant_trajectory_warns(tmp_path):
    k = 1200
    traj = Trajectory(TimeGrid(0.01, k), np.tile([0.5, -0.5], (k + 1, 1)), np.zeros((k, 2)), np.zeros((k, 2)),
                      np.zeros((k, 2)))
    path = tmp_path / "const.csv"
    traj.to_csv(path)
    with pytest.warns(RuntimeWarning, match="rank"):
        code = run("train", "vdp_low_noise", tmp_path / "o", *SEED0, "--trajectory", str(path))
    assert code in (0, 4)


# compare -----------------------------------------------------------------------

def test_compare_shares_perturbation_and_training_data(tmp_path):
    run("compare", "vdp_compare", tmp_path / "o", *SEED0)
    seed_dir = tmp_path / "o" / "seed-0"
    assert filecmp.cmp(seed_dir / "stochastic" / "perturbation.csv", seed_dir / "conventional" / "perturbation.csv",
                       shallow=False)
    summary = load_json(tmp_path / "o" / "summary.json")
    assert summary["runs"][0]["same_training_data"]


def test_compare_without_noise_gives_matching_arms(tmp_path):
    cfg = write_config(tmp_path, {"defaults": "vdp_low_noise", "system": {"sigma1": 0.0, "sigma2": 0.0}})
    assert run("compare", cfg, tmp_path / "o", *SEED0) == 0
    pair = load_json(tmp_path / "o" / "summary.json")["runs"][0]
    a, b = pair["stochastic"]["total_rmse"], pair["conventional"]["total_rmse"]
    assert pair["conventional"]["diverged_at"] is None
    assert abs(a - b) <= 0.05 * max(a, b)


# identify / eeg ------------------------------------------------------------------

def test_identify_surrogate_records_dt(tmp_path):
    assert run("identify", "eeg_surrogate", tmp_path / "o", *SEED0) == 0
    fit = load_json(tmp_path / "o" / "seed-0" / "fit.json")
    assert fit["dt"] == 0.0625 and fit["basis"] == ["1", "x", "x^2", "x^3"]
    assert os.path.exists(tmp_path / "o" / "seed-0" / "kde_drift.csv")


def test_identify_constant_channel_gives_zero_fit(tmp_path):
    csv = tmp_path / "flat.csv"
    csv.write_text("\n".join("3.0,1.0" for _ in range(16 * 150)) + "\n")
    with pytest.warns(RuntimeWarning, match="constant"):
        code = run("identify", "eeg_surrogate", tmp_path / "o", "--csv", str(csv))
    assert code == 0
    fit = load_json(tmp_path / "o" / "seed-0" / "fit.json")
    assert not any(fit["theta1"]) and not any(fit["theta2"])


@pytest.mark.parametrize("content,extra", [("1,2\n3\n", []), ("1.0\n" * 320, []), ("1,2\n" * 3200, ["--channel", "5"])])
def test_identify_bad_input_exit_code(tmp_path, content, extra):
    csv = tmp_path / "bad.csv"
    csv.write_text(content)
    assert run("identify", "eeg_surrogate", tmp_path / "o", "--csv", str(csv), *extra) == 3


def test_unknown_preset_and_bad_config(tmp_path):
    assert run("simulate", "no_such_preset", tmp_path / "o") == 3
    bad = write_config(tmp_path, {"system": {"kind": "lorenz"}})
    assert run("simulate", bad, tmp_path / "o") == 3
    loop = tmp_path / "loop.yaml"
    loop.write_text("defaults: loop.yaml\n")
    assert run("simulate", loop, tmp_path / "o") == 3


@pytest.mark.slow
def test_eeg_pipeline_single_seed(tmp_path):
    assert run("eeg-pipeline", "eeg_surrogate", tmp_path / "o", *SEED0) == 0
    seed_dir = tmp_path / "o" / "seed-0"
    for name in ("fit.json", "phase_a_perturbed.csv", "phase_b_report.json", "control.csv", "kde.csv"):
        assert (seed_dir / name).exists(), name
    header, rows, _ = read_csv(seed_dir / "control.csv")
    assert rows.shape[0] == 100
    assert read_csv(seed_dir / "kde.csv")[0] == ["x", "density_desired", "density_controlled", "density_original"]


@pytest.mark.slow
@pytest.mark.parametrize("cmd,config", [("simulate", "vdp_low_noise"), ("control", "vdp_low_noise"),
                                        ("identify", "eeg_surrogate"), ("eeg-pipeline", "eeg_surrogate")])
def test_reruns_are_bit_identical(tmp_path, cmd, config):
    run(cmd, config, tmp_path / "a", *SEED0)
    run(cmd, config, tmp_path / "b", *SEED0)
    assert same_tree(tmp_path / "a", tmp_path / "b")


def test_surrogate_command_round_trip(tmp_path):
    assert run("surrogate", "eeg_surrogate", tmp_path / "o", *SEED0) == 0
    raw = tmp_path / "o" / "seed-0" / "eeg_surrogate.csv"
    assert run("identify", "eeg_surrogate", tmp_path / "i", "--csv", str(raw)) == 0
