import csv
import io
import json

import numpy as np
import pytest

from advbenign.cli import main
from advbenign.io import load_dataset

from conftest import tiny_config


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_usage_errors(capsys):
    for argv in (["frobnicate"], ["attack", "--bogus"], []):
        code, _, err = run(capsys, *argv)
        assert code == 2
        assert json.loads(err)["error"] == "usage"


def test_config_error_lists_keys(capsys, tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model:\n  depth: 3\n")
    code, _, err = run(capsys, "run-experiment", "--name", "uap_probe", "--config", bad, "--out", tmp_path / "r")
    assert code == 3 and "model.depth" in json.loads(err)["message"]


def test_data_error_exit_code(capsys, tmp_path):
    code, _, err = run(capsys, "report", "--in", tmp_path / "nothing")
    assert code == 4 and json.loads(err)["exit_code"] == 4


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


def test_gen_train_attack_pipeline(capsys, workspace):
    code, out, _ = run(capsys, "gen-data", "--kind", "shapes10", "--train-per-class", 6, "--test-per-class", 2,
                       "--out", workspace / "data")
    assert code == 0
    paths = json.loads(out)
    cfg = tiny_config("uap_probe")
    cfg.save(workspace / "c.yaml")
    code, out, _ = run(capsys, "train", "--data", paths["train"], "--config", workspace / "c.yaml",
                       "--out", workspace / "models")
    assert code == 0
    ckpt = json.loads(out)["checkpoint"]

    code, out, _ = run(capsys, "attack", "--model", ckpt, "--data", paths["test"], "--method", "FGSM",
                       "--epsilon", 0, "--out", workspace / "adv0.npy")
    assert code == 0
    test, _ = load_dataset(paths["test"])
    assert np.array_equal(np.load(workspace / "adv0.npy"), test.images)

    code, out, _ = run(capsys, "attack", "--model", ckpt, "--data", paths["test"], "--method", "MI-FGSM",
                       "--epsilon", 8 / 255, "--target", 3, "--out", workspace / "adv.npy")
    assert code == 0 and json.loads(out)["attack"]["targeted"]
    assert np.abs(np.load(workspace / "adv.npy") - test.images).max() <= 8 / 255 + 1e-6

    code, out, _ = run(capsys, "uap", "--model", ckpt, "--data", paths["train"], "--test", paths["test"],
                       "--target", 1, "--epochs", 1, "--out", workspace / "uaps")
    assert code == 0 and (workspace / "uaps" / "uap_1.json").is_file()

    code, out, _ = run(capsys, "distort", "--data", paths["test"], "--kind", "gaussian", "--level", 2,
                       "--out", workspace / "g.npy")
    assert code == 0 and np.load(workspace / "g.npy").shape == test.images.shape
    code, _, err = run(capsys, "distort", "--data", paths["test"], "--kind", "adversarial", "--level", 2,
                       "--out", workspace / "a.npy")
    assert code == 3


def test_run_experiment_and_report(capsys, workspace):
    cfg = tiny_config("uap_probe")
    cfg.save(workspace / "uap.yaml")
    out_dir = workspace / "runs" / "x"
    code, out, _ = run(capsys, "run-experiment", "--name", "uap_probe", "--config", workspace / "uap.yaml",
                       "--out", out_dir)
    assert code == 0
    report = json.loads((out_dir / "report.json").read_text())
    assert len(report["uaps"]) == 10

    code, out, _ = run(capsys, "report", "--in", out_dir, "--format", "csv")
    assert code == 0
    rows = {(r["section"], r["name"], r["key"]): r["value"] for r in csv.DictReader(io.StringIO(out))}
    for name, value in report["metrics"].items():
        if isinstance(value, float):
            assert float(rows[("metric", name, "")]) == value
    code, out, _ = run(capsys, "report", "--in", out_dir, "--format", "json")
    assert json.loads(out) == report
    code, out, _ = run(capsys, "report", "--in", out_dir, "--format", "plots", "--out", workspace / "plots")
    assert code == 0 and out.strip().endswith(".png")


def test_cli_matches_library(capsys, workspace, tmp_path):
    from advbenign.experiments import run_experiment

    cfg = tiny_config("reject_verification")
    cfg.save(workspace / "rv.yaml")
    code, _, _ = run(capsys, "run-experiment", "--name", "reject_verification", "--config", workspace / "rv.yaml",
                     "--out", tmp_path / "cli")
    assert code == 0
    lib = run_experiment("reject_verification", cfg, tmp_path / "lib")
    assert json.loads((tmp_path / "cli" / "report.json").read_text())["metrics"] == \
        json.loads(json.dumps(lib.metrics))
