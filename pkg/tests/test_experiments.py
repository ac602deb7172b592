import json

import numpy as np
import pytest

from advbenign.datasets import rebuild
from advbenign.errors import ConfigurationError
from advbenign.experiments import identity_splits, run_experiment
from advbenign.io import load_dataset, read_json
from advbenign.model import load_model
from advbenign.reporting import load_report

from conftest import tiny_config

NAMES = ["turing_sensitivity", "reject_verification", "uap_probe", "nonrobust_generalization",
         "adversarial_augmentation"]


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    out = {}
    for name in NAMES:
        cfg = tiny_config(name)
        if name == "turing_sensitivity":
            cfg.dataset.train_per_class, cfg.dataset.test_per_class = 4, 2
        out[name] = (cfg, root / name, run_experiment(name, cfg, root / name))
    return out


def test_turing_report_shape(runs):
    _, d, rep = runs["turing_sensitivity"]
    assert [c["kind"] for c in rep.curves] == ["adversarial", "gaussian"]
    assert all([p["level"] for p in c["points"]] == list(range(9)) for c in rep.curves)
    assert sorted(p.name for p in (d / "plots").iterdir()) == ["curve_adversarial.png", "curve_gaussian.png"]
    for key in ("adversarial_final_ratio", "adversarial_spearman", "gaussian_final_ratio"):
        assert key in rep.metrics


def test_verification_report(runs):
    _, _, rep = runs["reject_verification"]
    m = rep.metrics
    assert m["asr_epsilon_0"] == 0.0
    assert rep.table("asr_by_method")["columns"] == ["FGSM", "I-FGSM", "MI-FGSM", "DI2-FGSM", "D-MI2-FGSM"]
    assert set(rep.table("asr_makeup")["columns"]) == {"makeup", "adversarial", "makeup_adversarial"}
    assert rep.references["arcface_lfw_asr"]["FGSM"] == 0.985


def test_uap_report(runs):
    _, d, rep = runs["uap_probe"]
    assert [u["target_class"] for u in rep.uaps] == list(range(10))
    assert len(list((d / "uaps").glob("*.npy"))) == 10
    assert all(u["linf"] <= u["epsilon"] + 1e-6 for u in rep.uaps)


def test_nonrobust_report(runs):
    _, d, rep = runs["nonrobust_generalization"]
    assert set(rep.table("clean_test_accuracy")["rows"]) == {"f_ori", "f_adv", "f_eps0"}
    assert rep.references == {"f_ori": 0.944, "f_adv": 0.663}
    assert rep.datasets["D_adv"]["manifest"]["kind"] == "D_adv"


def test_augmentation_report(runs):
    _, d, rep = runs["adversarial_augmentation"]
    t = rep.table("reduced_class_accuracy")
    assert t["columns"] == ["frog", "horse", "ship", "truck"] and list(t["rows"]) == ["f_imb", "f_aug"]
    assert [p.name for p in (d / "plots").iterdir()] == ["table_reduced_class_accuracy.png"]
    assert "median_delta_points" in rep.metrics and "median_control_delta_points" in rep.metrics


@pytest.mark.parametrize("name", NAMES)
def test_run_directory_contents(runs, name):
    cfg, d, rep = runs[name]
    assert read_json(d / "spec.json") == cfg.to_dict()
    assert load_report(d).to_dict() == json.loads(json.dumps(rep.to_dict()))
    assert (d / "report.csv").is_file() and any((d / "checkpoints").glob("*.pt"))
    assert rep.wall_clock_seconds > 0 and "torch" in rep.environment
    for entry in rep.datasets.values():
        if "blob" in entry:
            ds, _ = load_dataset(d / entry["blob"])
            assert ds.content_hash() == entry["content_hash"]


@pytest.mark.parametrize("name", NAMES)
def test_rerun_reproduces_metrics(runs, tmp_path, name):
    cfg, _, rep = runs[name]
    again = run_experiment(name, cfg, tmp_path / "again")
    assert repr(again.metrics) == repr(rep.metrics)  # NaN-aware: a flat curve has NaN Spearman
    assert again.curves == rep.curves and again.tables == rep.tables and again.uaps == rep.uaps
    assert {k: v["content_hash"] for k, v in again.datasets.items()} == \
        {k: v["content_hash"] for k, v in rep.datasets.items()}


def test_manifests_rebuild_bitwise(runs):
    _, d, _ = runs["nonrobust_generalization"]
    _, manifest = load_dataset(d / "datasets" / "D_adv.npz")
    source = tiny_source(runs["nonrobust_generalization"][0])
    f_ori = load_model(d / "checkpoints" / "f_ori.pt")
    stored, _ = load_dataset(d / "datasets" / "D_adv.npz")
    assert rebuild(manifest, source, f_ori).content_hash() == stored.content_hash()

    _, d, _ = runs["adversarial_augmentation"]
    source = tiny_source(runs["adversarial_augmentation"][0])
    for seed in (0, 1):
        d_imb_stored, m_imb = load_dataset(d / "datasets" / f"D_imb_seed{seed}.npz")
        d_imb = rebuild(m_imb, source)
        assert d_imb.content_hash() == d_imb_stored.content_hash()
        d_aug_stored, m_aug = load_dataset(d / "datasets" / f"D_aug_seed{seed}.npz")
        f_imb = load_model(d / "checkpoints" / f"f_imb_seed{seed}.pt")
        assert rebuild(m_aug, d_imb, f_imb).content_hash() == d_aug_stored.content_hash()


def tiny_source(cfg):
    from advbenign.experiments import load_image_classification

    return load_image_classification(cfg.dataset)[0]


def test_identity_split_rules():
    train, (a, b, same), (enrolled, probes) = identity_splits(100, 8)
    assert len(probes) >= 200 and enrolled.shape == probes.shape
    assert same.sum() == (~same).sum()
    with pytest.raises(ConfigurationError):
        identity_splits(19, 8)
    with pytest.raises(ConfigurationError):
        identity_splits(30, 3)


def test_unknown_experiment():
    with pytest.raises(ConfigurationError):
        run_experiment("nope")


def test_cifar_source_missing_is_data_error(tmp_path, monkeypatch):
    from advbenign.errors import DataError

    monkeypatch.setenv("ADVBENIGN_DATA", str(tmp_path))
    cfg = tiny_config("uap_probe")
    cfg.dataset.source = "cifar10"
    with pytest.raises(DataError):
        run_experiment("uap_probe", cfg)
