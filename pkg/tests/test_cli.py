import json

import pandas as pd
import pytest

from cli_runs import TINY_NET, artifact_bytes, run_every_command, write_linear_csv
from penn.cli import EXIT_MISSING, EXIT_NONFINITE, EXIT_RUNTIME, EXIT_USAGE, main, resolve


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return run_every_command(tmp_path_factory.mktemp("cli"))


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_expected_artifacts(runs):
    expected = {
        "simulate": {"results.csv", "summary.csv"},
        "train": {"model.json", "loss_trace.csv", "coefficients.csv"},
        "explain": {"contributions_penn.csv", "contributions_lime.csv", "contributions_shapley.csv"},
        "cv": {"cv_grid.csv", "cv_best.json"},
        "capm-fixture": {"returns.csv", "macro.csv", "truth.csv"},
        "capm": {"capm_A.csv", "capm_B.csv", "forecast_A.csv", "forecast_B.csv", "rolling_A.csv", "rolling_B.csv"},
        "gradcheck": {"gradcheck.json"},
    }
    for command, names in expected.items():
        manifest = json.loads((runs[command] / "manifest.json").read_text())
        assert set(manifest["artifacts"]) == names
        assert manifest["command"] == command and manifest["exit_code"] == 0
        assert set(manifest) >= {"config", "seed", "inputs", "timings"}


def test_manifest_records_input_hashes(runs):
    manifest = json.loads((runs["capm"] / "manifest.json").read_text())
    assert len(manifest["inputs"]) == 2 and all(len(h) == 64 for h in manifest["inputs"].values())
    assert json.loads((runs["simulate"] / "manifest.json").read_text())["seed"] == 3


def test_explain_rows_align(runs):
    frames = [pd.read_csv(runs["explain"] / f"contributions_{m}.csv") for m in ("penn", "lime", "shapley")]
    assert all(f["row"].tolist() == list(range(60)) for f in frames)
    assert "phi_const" in frames[0].columns and "phi_x1" in frames[1].columns


def test_gradcheck_report(runs):
    report = json.loads((runs["gradcheck"] / "gradcheck.json").read_text())
    assert report["passed"] and report["max_relative_error"] < 1e-5


def test_gradcheck_failure_exit(tmp_path):
    assert main(["gradcheck", "--tolerance", "1e-30", "--out", str(tmp_path)]) == EXIT_RUNTIME


def test_replay_is_byte_identical(runs, tmp_path):
    for command in ("train", "cv", "explain", "simulate"):
        dest = tmp_path / command
        assert main(["replay", str(runs[command] / "manifest.json"), "--out", str(dest)]) == 0
        assert artifact_bytes(dest) == artifact_bytes(runs[command])


def test_inputs_not_mutated(runs, tmp_path):
    data = write_linear_csv(tmp_path / "d.csv")
    before = data.read_bytes()
    assert main(["train", "--data", str(data), *TINY_NET, "--out", str(tmp_path / "o")]) == 0
    assert data.read_bytes() == before


def test_empty_grid_names_field(tmp_path, capsys):
    cfg = tmp_path / "g.toml"
    cfg.write_text("[simulate]\nn_values = []\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    err = _error(capsys)
    assert err["error"] == "usage" and "n_values" in err["message"] and err["exit_code"] == 2


def test_usage_errors(tmp_path, capsys):
    data = write_linear_csv(tmp_path / "d.csv")
    cases = [
        ["train"],  # missing --data
        ["train", "--data", str(data), "--epochs", "0"],
        ["train", "--data", str(data), "--kernel", "gaussian"],
        ["train", "--data", str(data), "--target", "nope"],
        ["capm", "--returns", str(data), "--macro", str(data)],  # missing --yoy-window
        ["explain", "--data", str(data), "--methods", "penn"],  # no model
    ]
    for argv in cases:
        assert main([*argv, "--out", str(tmp_path / "o")]) == EXIT_USAGE, argv
        assert _error(capsys)["exit_code"] == EXIT_USAGE
    bad = tmp_path / "bad.toml"
    bad.write_text("[train]\nlearning_rat = 0.1\n")
    assert main(["train", "--data", str(data), "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "learning_rat" in _error(capsys)["message"]


def test_missing_files(tmp_path, capsys):
    assert main(["train", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "o")]) == EXIT_MISSING
    assert _error(capsys)["error"] == "missing-file"
    assert main(["simulate", "--config", str(tmp_path / "none.toml")]) == EXIT_MISSING
    assert main(["replay", str(tmp_path / "manifest.json")]) == EXIT_MISSING


def test_replay_detects_changed_input(tmp_path, capsys):
    data = write_linear_csv(tmp_path / "d.csv")
    assert main(["train", "--data", str(data), *TINY_NET, "--out", str(tmp_path / "o")]) == 0
    write_linear_csv(data, seed=1)
    assert main(["replay", str(tmp_path / "o" / "manifest.json")]) == EXIT_MISSING
    assert _error(capsys)["error"] == "changed-input"


def test_nonfinite_training_exit(tmp_path, capsys):
    path = tmp_path / "huge.csv"
    pd.DataFrame({"x1": [1.0, 2.0, 3.0, 4.0], "y": [1e308, 1.0, 2.0, 3.0]}).to_csv(path, index=False)
    with pytest.warns(RuntimeWarning):
        code = main(["train", "--data", str(path), *TINY_NET, "--out", str(tmp_path / "o")])
    assert code == EXIT_NONFINITE and _error(capsys)["error"] == "non-finite-training"


def test_precedence_defaults_config_flags():
    cfg = resolve("train", {"lam": 0.5, "train": {"epochs": 7}}, {"epochs": "9", "data": "x.csv"})
    assert cfg["lam"] == 0.5 and cfg["epochs"] == 9 and cfg["delta"] == 0.2
    assert resolve("capm", {}, {"returns": "r", "macro": "m", "yoy_window": "12"})["epochs"] == 200
