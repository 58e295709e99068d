import json
import os

import numpy as np
import pytest

import switchlab as sl
from switchlab.cli import EXIT_DEGENERATE, EXIT_INPUT, EXIT_OK, main
from switchlab.io import write_panel_csv


@pytest.fixture()
def sim_dir(tmp_path):
    out = tmp_path / "sim"
    code = main(
        ["simulate", "--preset", "temporal", "--n", "8", "--seed", "3",
         "--out", str(out)]
    )
    assert code == EXIT_OK
    return out


def test_simulate_outputs(sim_dir):
    assert (sim_dir / "panel.csv").exists()
    manifest = json.loads((sim_dir / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["options"]["seed"] == 3


def test_fit_outputs(sim_dir, tmp_path):
    out = tmp_path / "fit"
    code = main(
        ["fit", "--input", str(sim_dir / "panel.csv"), "--bandwidth", "0.1",
         "--out", str(out)]
    )
    assert code == EXIT_OK
    assert (out / "coefficients.csv").exists()
    fit = json.loads((out / "fit.json").read_text())
    assert {"direct_effect", "indirect_effect", "bandwidth"} <= set(fit)


def test_test_subcommand(sim_dir, tmp_path):
    out = tmp_path / "t"
    code = main(
        ["test", "--input", str(sim_dir / "panel.csv"), "--effect", "DE",
         "--bandwidth", "0.1", "--out", str(out)]
    )
    assert code == EXIT_OK
    rep = json.loads((out / "test.json").read_text())
    assert rep["effect"] == "DE"
    assert 0.0 <= rep["p_value"] <= 1.0


def test_ie_bootstrap_subcommand(sim_dir, tmp_path):
    out = tmp_path / "ie"
    code = main(
        ["test", "--input", str(sim_dir / "panel.csv"), "--effect", "IE",
         "--bandwidth", "0.1", "--bootstrap", "40", "--out", str(out)]
    )
    assert code == EXIT_OK
    rep = json.loads((out / "test.json").read_text())
    assert rep["n_bootstrap"] == 40
    assert rep["p_value"] >= 1.0 / 41


def test_pinned_null_and_signal_fixtures(tmp_path):
    # Seed-pinned end-to-end fixtures: no injected effect -> clearly
    # insignificant; a 1% injected direct effect at n=20 -> p < 0.01.
    null_sim, null_out = tmp_path / "ns", tmp_path / "nt"
    assert main(["simulate", "--preset", "temporal", "--n", "8",
                 "--seed", "12", "--out", str(null_sim)]) == EXIT_OK
    assert main(["test", "--input", str(null_sim / "panel.csv"),
                 "--effect", "DE", "--bandwidth", "0.1",
                 "--out", str(null_out)]) == EXIT_OK
    assert json.loads((null_out / "test.json").read_text())["p_value"] > 0.05

    sig_sim, sig_out = tmp_path / "ss", tmp_path / "st"
    assert main(["simulate", "--preset", "temporal", "--n", "20",
                 "--delta-de", "1", "--seed", "12", "--out", str(sig_sim)]) == EXIT_OK
    assert main(["test", "--input", str(sig_sim / "panel.csv"),
                 "--effect", "DE", "--bandwidth", "0.1",
                 "--out", str(sig_out)]) == EXIT_OK
    assert json.loads((sig_out / "test.json").read_text())["p_value"] < 0.01


def test_simulate_same_seed_byte_identical(tmp_path):
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["simulate", "--preset", "temporal", "--n", "4",
                     "--seed", "6", "--out", str(out)]) == EXIT_OK
        outs.append((out / "panel.csv").read_bytes())
    assert outs[0] == outs[1]


def test_fit_writes_diagnostics(sim_dir, tmp_path):
    out = tmp_path / "diag"
    assert main(["fit", "--input", str(sim_dir / "panel.csv"),
                 "--bandwidth", "0.1", "--out", str(out)]) == EXIT_OK
    sigma = np.loadtxt(out / "sigma_y.csv", delimiter=",", skiprows=1)
    assert sigma.shape == (48, 48)
    assert np.allclose(sigma, sigma.T, atol=1e-10)
    header = (out / "residuals.csv").read_text().splitlines()[0]
    assert header == "date,time,residual,eta,eps"


def test_missing_input_exit_code(tmp_path):
    code = main(["fit", "--input", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_INPUT


def test_degenerate_exit_code(tmp_path):
    # A panel with constant zero data cannot support the IE bootstrap.
    ds = sl.PanelDataset(
        np.zeros((6, 6, 1)),
        sl.panel.generate_actions(sl.DesignSpec("switchback"), 6, 6),
        np.zeros((6, 6)),
    )
    path = tmp_path / "flat.csv"
    write_panel_csv(path, ds)
    code = main(["test", "--input", str(path), "--effect", "IE",
                 "--bandwidth", "0.1", "--bootstrap", "20",
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_DEGENERATE


def test_config_file_and_flag_precedence(sim_dir, tmp_path):
    cfg = tmp_path / "cfg"
    cfg.write_text("bandwidth=0.2\nseed=9\n")
    out = tmp_path / "f"
    code = main(
        ["fit", "--input", str(sim_dir / "panel.csv"), "--config", str(cfg),
         "--bandwidth", "0.1", "--out", str(out)]
    )
    assert code == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    # The flag beats the config value; the config fills in the seed.
    assert manifest["options"]["bandwidth"] == 0.1
    assert manifest["options"]["seed"] == 9


def test_config_unknown_key_rejected(sim_dir, tmp_path):
    cfg = tmp_path / "cfg"
    cfg.write_text("not_a_flag=1\n")
    code = main(
        ["fit", "--input", str(sim_dir / "panel.csv"), "--config", str(cfg),
         "--out", str(tmp_path / "o")]
    )
    assert code == EXIT_INPUT


def test_env_seed_fallback(sim_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("SWITCHLAB_SEED", "77")
    out = tmp_path / "f"
    code = main(
        ["fit", "--input", str(sim_dir / "panel.csv"), "--bandwidth", "0.1",
         "--out", str(out)]
    )
    assert code == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["options"]["seed"] == 77


def test_study_byte_identical_across_workers(tmp_path):
    common = ["study", "--preset", "temporal", "--effects", "DE",
              "--designs", "switchback", "--n-grid", "6", "--ti-grid", "1",
              "--delta-de-grid", "0", "--replicates", "6",
              "--bandwidth", "0.1", "--seed", "2"]
    out1, out2 = tmp_path / "w1", tmp_path / "w2"
    assert main(common + ["--workers", "1", "--out", str(out1)]) == EXIT_OK
    assert main(common + ["--workers", "3", "--out", str(out2)]) == EXIT_OK
    assert (out1 / "study.csv").read_bytes() == (out2 / "study.csv").read_bytes()


def test_manifest_replay(tmp_path):
    # A manifest alone carries enough information to reproduce the run.
    out1 = tmp_path / "orig"
    argv = ["study", "--preset", "temporal", "--effects", "DE",
            "--designs", "switchback", "--n-grid", "6", "--ti-grid", "1",
            "--delta-de-grid", "0", "--replicates", "5",
            "--bandwidth", "0.1", "--seed", "8", "--out", str(out1)]
    assert main(argv) == EXIT_OK
    manifest = json.loads((out1 / "manifest.json").read_text())
    out2 = tmp_path / "replay"
    replay = [manifest["command"]]
    for key, value in manifest["options"].items():
        if key == "out" or value is None:
            continue
        replay += [f"--{key.replace('_', '-')}", str(value)]
    replay += ["--out", str(out2)]
    assert main(replay) == EXIT_OK
    assert (out1 / "study.csv").read_bytes() == (out2 / "study.csv").read_bytes()


def test_study_marks_failed_cells():
    # A cell whose treatment interval does not divide the day length is
    # marked failed instead of aborting the whole study.
    cfg = sl.StudyConfig(
        effects=("DE",),
        designs=("switchback",),
        n_grid=(6,),
        ti_grid=(5, 1),
        delta_pairs=((0.0, 0.0),),
        replicates=3,
        bandwidth=0.1,
        seed=1,
    )
    df = sl.rejection_study(sl.temporal_analog_environment, cfg)
    assert len(df) == 2
    failed = df[df["ti"] == 5].iloc[0]
    good = df[df["ti"] == 1].iloc[0]
    assert failed["status"].startswith("TiMismatch")
    assert np.isnan(failed["rate"])
    assert good["status"] == "ok"


def test_empty_study_grid_exit_code(tmp_path):
    code = main(["study", "--preset", "temporal", "--n-grid", "",
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_INPUT


def test_design_compare_outputs(tmp_path):
    out = tmp_path / "dc"
    code = main(["design-compare", "--m-grid", "6,12", "--rho", "0.5",
                 "--n", "10", "--replicates", "10", "--out", str(out)])
    assert code == EXIT_OK
    text = (out / "design_compare.csv").read_text()
    assert "switchback" in text
    assert (out / "manifest.json").exists()


def test_spatiotemporal_cli_round(tmp_path):
    sim = tmp_path / "st"
    code = main(["simulate", "--preset", "spatiotemporal", "--n", "5",
                 "--seed", "4", "--out", str(sim)])
    assert code == EXIT_OK
    for name in ("panel.csv", "adjacency.csv", "coords.csv"):
        assert (sim / name).exists()
    out = tmp_path / "stfit"
    code = main(["fit", "--model", "stvcdp", "--input", str(sim / "panel.csv"),
                 "--adjacency", str(sim / "adjacency.csv"),
                 "--coords", str(sim / "coords.csv"),
                 "--bandwidth", "0.1", "--spatial-bandwidth", "0.6",
                 "--out", str(out)])
    assert code == EXIT_OK
    assert (out / "coefficients.csv").exists()
