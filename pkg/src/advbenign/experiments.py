"""End-to-end experiments: train, derive data, attack, measure, report.

Each ``run_*`` function takes a :class:`~advbenign.config.RunConfig` and an
optional run directory. With a directory, checkpoints, derived datasets with
manifests, ``spec.json``, ``report.json`` and ``report.csv`` are written there.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from pathlib import Path

import numpy as np

from . import metrics
from .attacks import (AttackConfig, METHODS, attack_verification, blank_probe,
                      compose_transform_then_attack, fooling_rate, proxy_makeup, train_uap)
from .config import RunConfig, resolve_config
from .datasets import (AlphabetSpec, CIFAR10_CLASSES, REDUCED_CLASSES, build_adv_dataset,
                       build_augmented, build_imbalanced, generate_alphabet, load_cifar10,
                       reduced_profile)
from .distortions import build_distorted_testset
from .errors import ConfigurationError, DataError
from .io import save_dataset, write_json
from .model import LabeledDataset, save_model, train_classifier, train_embedding
from .reporting import ExperimentReport, emit_plots, write_report
from .synthetic import make_identities, make_shapes10

log = logging.getLogger(__name__)

# full-scale values reported for the original models; context only
FULL_SCALE_REFERENCES = {
    "turing_sensitivity": {},
    "reject_verification": {
        "arcface_lfw_asr": {"FGSM": 0.985, "I-FGSM": 0.994, "MI-FGSM": 0.994,
                            "DI2-FGSM": 0.994, "D-MI2-FGSM": 0.993},
        "arcface_lfw_makeup": {"makeup": 0.051, "adversarial": 0.985, "makeup_adversarial": 0.987},
    },
    "uap_probe": {"blank_confidence": 1.0},
    "nonrobust_generalization": {"f_ori": 0.944, "f_adv": 0.663},
    "adversarial_augmentation": {
        "f_imb": {"frog": 0.447, "horse": 0.425, "ship": 0.566, "truck": 0.541, "average": 0.495},
        "f_aug": {"frog": 0.537, "horse": 0.454, "ship": 0.580, "truck": 0.617, "average": 0.547},
    },
}


class _Run:
    """Bookkeeping shared by the experiment runners."""

    def __init__(self, cfg, out_dir, save_datasets=True):
        self.cfg = cfg
        self.out = Path(out_dir) if out_dir is not None else None
        self.save_datasets = save_datasets
        self.start = time.perf_counter()
        self.report = ExperimentReport(cfg.experiment.name, cfg.to_dict(),
                                       references=FULL_SCALE_REFERENCES[cfg.experiment.name])
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            write_json(self.out / "spec.json", cfg.to_dict())

    def dataset(self, name, ds, manifest=None):
        entry = {"content_hash": ds.content_hash(), "size": len(ds),
                 "class_counts": ds.class_counts().tolist()}
        if manifest is not None:
            entry["manifest"] = {k: v for k, v in manifest.to_dict().items()
                                 if k not in ("source_index", "original_label", "target_label")}
        if self.out is not None and manifest is not None:
            if self.save_datasets:
                save_dataset(ds, self.out / "datasets", name, manifest.to_dict())
                entry["blob"] = f"datasets/{name}.npz"
            else:
                write_json(self.out / "datasets" / f"{name}.manifest.json", manifest.to_dict())
        self.report.datasets[name] = entry

    def model(self, name, model):
        if self.out is not None:
            save_model(model, self.out / "checkpoints", name)

    def finish(self, plots=True):
        self.report.wall_clock_seconds = time.perf_counter() - self.start
        if self.out is not None:
            write_report(self.report, self.out)
            if plots and (self.report.curves or self.report.tables):
                emit_plots(self.report, self.out / "plots")
        return self.report


def _arch(cfg, **extra):
    return {**cfg.model.arch(), **extra}


def _train_cfg(cfg, seed):
    return dataclasses.replace(cfg.train, seed=seed)


# ---------------------------------------------------------------------------
# data loading


def load_image_classification(dcfg):
    """``(train, test, source_used)`` for the CIFAR-10 family of experiments.

    ``source="auto"`` uses CIFAR-10 when it can be loaded and falls back to
    the procedural ``shapes10`` set otherwise. The reduced profile subsamples
    the CIFAR-10 training split by ``reduced_fraction``.
    """
    source = dcfg.source
    if source == "auto":
        try:
            train, test = load_cifar10(dcfg.path)
            source = "cifar10"
        except DataError as exc:
            log.warning("CIFAR-10 unavailable (%s); using shapes10", exc)
            source = "shapes10"
    elif source == "cifar10":
        train, test = load_cifar10(dcfg.path)
    elif source != "shapes10":
        raise ConfigurationError(f"dataset source {source!r} is not an image-classification set")
    if source == "shapes10":
        train, test = make_shapes10(dcfg.train_per_class, dcfg.test_per_class, seed=dcfg.seed)
    elif dcfg.profile == "reduced":
        train = reduced_profile(train, dcfg.reduced_fraction, dcfg.seed)
    return train, test, source


def identity_splits(n_identities, per_identity, seed=0, min_pairs=200):
    """Train / validation-pair / test-pair sets of synthetic identities.

    Test pairs enrol image 0 of each test identity and probe with the rest.
    Validation pairs mix same-identity and different-identity pairs for
    threshold calibration.
    """
    if n_identities < 20:
        raise ConfigurationError("verification needs at least 20 identities")
    if per_identity < 4:
        raise ConfigurationError("verification needs at least 4 images per identity")
    n_test = min(math.ceil(min_pairs / (per_identity - 1)), n_identities // 2)
    n_val = max(2, (n_identities - n_test) // 4)
    n_train = n_identities - n_test - n_val
    images, labels = make_identities(n_identities, per_identity, seed=seed)
    by_id = images.reshape(n_identities, per_identity, *images.shape[1:])
    train = LabeledDataset(images[: n_train * per_identity], labels[: n_train * per_identity],
                           n_train, "train")
    val = by_id[n_train:n_train + n_val]
    pos_a = np.repeat(val[:, :1], per_identity - 1, axis=1).reshape(-1, *images.shape[1:])
    pos_b = val[:, 1:].reshape(-1, *images.shape[1:])
    neg_a = pos_a
    neg_b = np.roll(val[:, 1:], 1, axis=0).reshape(-1, *images.shape[1:])
    val_pairs = (np.concatenate([pos_a, neg_a]), np.concatenate([pos_b, neg_b]),
                 np.r_[np.ones(len(pos_a), bool), np.zeros(len(neg_a), bool)])
    test = by_id[n_train + n_val:]
    enrolled = np.repeat(test[:, :1], per_identity - 1, axis=1).reshape(-1, *images.shape[1:])
    probes = test[:, 1:].reshape(-1, *images.shape[1:])
    return train, val_pairs, (enrolled, probes)


# ---------------------------------------------------------------------------
# experiments


def run_turing_sensitivity(cfg=None, out_dir=None, save_datasets=True):
    cfg = resolve_config(cfg, "turing_sensitivity")
    run = _Run(cfg, out_dir, save_datasets)
    d = cfg.dataset
    frac = d.reduced_fraction if d.profile == "reduced" else 1.0
    spec = AlphabetSpec(train_per_class=max(1, round(d.train_per_class * frac)),
                        test_per_class=max(1, round(d.test_per_class * frac)),
                        noise_amplitude=d.noise_amplitude, seed=d.seed)
    train, test = generate_alphabet(spec)
    run.dataset("alphabet_train", train)
    run.dataset("alphabet_test", test)
    model = train_classifier(train, _arch(cfg), _train_cfg(cfg, cfg.experiment.seed))
    run.model("ocr", model)
    m = run.report.metrics
    m["clean_accuracy"] = metrics.accuracy(model, test)
    m["train_accuracy"] = model.metrics["train_accuracy"]
    for kind in ("adversarial", "gaussian"):
        schedule = dataclasses.replace(cfg.distortion, kind=kind)
        sets = build_distorted_testset(test, model, schedule)
        curve = metrics.sensitivity_curve(model, sets, kind)
        run.report.curves.append(curve.to_dict())
        m[f"{kind}_final_ratio"] = curve.ratio()
        m[f"{kind}_spearman"] = curve.spearman()
        run.report.datasets[f"{kind}_level{schedule.levels}"] = {
            "content_hash": sets[schedule.levels].content_hash(), "size": len(test)}
    m["adversarial_collapse"] = bool(m["adversarial_final_ratio"] <= 0.2 and m["adversarial_spearman"] <= -0.9)
    m["gaussian_stable"] = bool(m["gaussian_final_ratio"] >= 0.7)
    return run.finish()


def run_reject_verification(cfg=None, out_dir=None, save_datasets=True):
    cfg = resolve_config(cfg, "reject_verification")
    run = _Run(cfg, out_dir, save_datasets)
    d = cfg.dataset
    train, val_pairs, (enrolled, probes) = identity_splits(d.identities, d.images_per_identity, d.seed)
    run.dataset("identities_train", train)
    model = train_embedding(train, _arch(cfg), _train_cfg(cfg, cfg.experiment.seed), val_pairs)
    run.model("embedding", model)
    n_wo, n_total = metrics.verification_counts(model, enrolled, probes)
    m = run.report.metrics
    m.update(n_pairs=n_total, n_wo=n_wo, clean_verification_accuracy=n_wo / n_total,
             match_threshold=model.match_threshold,
             val_pair_accuracy=model.metrics.get("val_pair_accuracy"))
    base = cfg.attack
    rows = {}
    for method in METHODS:
        acfg = AttackConfig.for_method(method, epsilon=base.epsilon, momentum_decay=base.momentum_decay,
                                       diversity_prob=base.diversity_prob, resize_min=base.resize_min,
                                       seed=base.seed)
        res = attack_verification(model, probes, enrolled, acfg)
        n_w, _ = metrics.verification_counts(model, enrolled, res.adversarial)
        rows[method] = metrics.asr(n_wo=n_wo, n_w=n_w, n_total=n_total)
        m[f"asr_{method}"] = rows[method]
    zero = AttackConfig.for_method("FGSM", epsilon=0.0, step_size=base.step_size, seed=base.seed)
    res = attack_verification(model, probes, enrolled, zero)
    m["asr_epsilon_0"] = metrics.asr(n_wo=n_wo, n_w=metrics.verification_counts(model, enrolled, res.adversarial)[0],
                                     n_total=n_total)
    # makeup proxy: transform alone, then transform followed by FGSM
    made_up = proxy_makeup(probes)
    m["asr_makeup"] = metrics.asr(n_wo=n_wo, n_w=metrics.verification_counts(model, enrolled, made_up)[0],
                                  n_total=n_total)
    fgsm = AttackConfig.for_method("FGSM", epsilon=base.epsilon, seed=base.seed)
    res = compose_transform_then_attack(model, probes, proxy_makeup, fgsm, enrolled=enrolled)
    m["asr_makeup_adversarial"] = metrics.asr(
        n_wo=n_wo, n_w=metrics.verification_counts(model, enrolled, res.adversarial)[0], n_total=n_total)
    m["asr_adversarial"] = rows["FGSM"]
    run.report.add_table("asr_by_method", list(rows), {"asr": list(rows.values())})
    run.report.add_table("asr_makeup", ["makeup", "adversarial", "makeup_adversarial"],
                         {"asr": [m["asr_makeup"], m["asr_adversarial"], m["asr_makeup_adversarial"]]})
    return run.finish()


def run_uap_probe(cfg=None, out_dir=None, save_datasets=True, uap_train_size=2000):
    cfg = resolve_config(cfg, "uap_probe")
    run = _Run(cfg, out_dir, save_datasets)
    train, test, source = load_image_classification(cfg.dataset)
    run.report.metrics["dataset_source"] = source
    run.dataset("train", train)
    run.dataset("test", test)
    e = cfg.experiment
    model = train_classifier(train, _arch(cfg), _train_cfg(cfg, e.seed))
    run.model("f", model)
    m = run.report.metrics
    m["clean_accuracy"] = metrics.accuracy(model, test)
    rng = np.random.default_rng(e.seed)
    fit = train.subset(np.sort(rng.choice(len(train), size=min(uap_train_size, len(train)), replace=False)))
    rates, confident = [], 0
    for c in range(train.class_count):
        uap = train_uap(model, fit, c, e.uap_epsilon, e.uap_epochs, e.uap_step_size, seed=e.seed + c)
        rate = fooling_rate(model, test, uap)
        pred, conf, target_conf = blank_probe(model, uap)
        name = train.class_names[c] if train.class_names else str(c)
        run.report.uaps.append({
            "target_class": c, "class_name": name, "epsilon": uap.epsilon, "fooling_rate": rate,
            "train_fooling_rate": uap.fooling_rate, "blank_prediction": pred,
            "blank_confidence": round(conf, 4), "blank_target_confidence": round(target_conf, 4),
            "linf": float(np.abs(uap.delta).max()),
        })
        if out_dir is not None:
            uap.fooling_rate = rate
            uap.save(run.out / "uaps", f"uap_{c}")
        rates.append(rate)
        confident += int(pred == c and target_conf >= 0.99)
    m["mean_fooling_rate"] = float(np.mean(rates))
    m["blank_confident_classes"] = confident
    run.report.add_table("uap", [u["class_name"] for u in run.report.uaps],
                         {"fooling_rate": rates,
                          "blank_target_confidence": [u["blank_target_confidence"] for u in run.report.uaps]})
    return run.finish()


def run_nonrobust_generalization(cfg=None, out_dir=None, save_datasets=True):
    cfg = resolve_config(cfg, "nonrobust_generalization")
    run = _Run(cfg, out_dir, save_datasets)
    train, test, source = load_image_classification(cfg.dataset)
    m = run.report.metrics
    m["dataset_source"] = source
    run.dataset("D_ori", train)
    run.dataset("test", test)
    e = cfg.experiment
    f_ori = train_classifier(train, _arch(cfg), _train_cfg(cfg, e.seed))
    run.model("f_ori", f_ori)
    m["f_ori_accuracy"] = metrics.accuracy(f_ori, test)
    acfg = dataclasses.replace(cfg.attack, targeted=True)
    d_adv, manifest = build_adv_dataset(train, f_ori, acfg, seed=e.seed, profile=cfg.dataset.profile)
    run.dataset("D_adv", d_adv, manifest)
    m["d_adv_attack_success_rate"] = manifest.attack_success_rate
    f_adv = train_classifier(d_adv, _arch(cfg), _train_cfg(cfg, e.seed))
    run.model("f_adv", f_adv)
    m["f_adv_accuracy"] = metrics.accuracy(f_adv, test)
    rows = {"f_ori": [m["f_ori_accuracy"]], "f_adv": [m["f_adv_accuracy"]]}
    if e.controls:
        zero = AttackConfig(method="FGSM", epsilon=0.0, step_size=acfg.step_size, iterations=1,
                            targeted=True, seed=acfg.seed)
        d_rand, manifest0 = build_adv_dataset(train, f_ori, zero, seed=e.seed, profile=cfg.dataset.profile)
        run.dataset("D_adv_eps0", d_rand, manifest0)
        f_rand = train_classifier(d_rand, _arch(cfg), _train_cfg(cfg, e.seed))
        m["f_eps0_accuracy"] = metrics.accuracy(f_rand, test)
        rows["f_eps0"] = [m["f_eps0_accuracy"]]
    run.report.add_table("clean_test_accuracy", ["accuracy"], rows)
    return run.finish()


def run_adversarial_augmentation(cfg=None, out_dir=None, save_datasets=True):
    cfg = resolve_config(cfg, "adversarial_augmentation")
    run = _Run(cfg, out_dir, save_datasets)
    train, test, source = load_image_classification(cfg.dataset)
    m = run.report.metrics
    m["dataset_source"] = source
    run.dataset("D_ori", train)
    e = cfg.experiment
    names = train.class_names or CIFAR10_CLASSES
    reduced = [names.index(c) for c in REDUCED_CLASSES]
    original_size = {c: int(train.class_counts()[c]) for c in reduced}
    acfg = dataclasses.replace(cfg.attack, targeted=True)
    per_seed = {"f_imb": [], "f_aug": [], "f_eps0": []}
    deltas, control_deltas = [], []
    for seed in e.seeds:
        d_imb, man_imb = build_imbalanced(train, REDUCED_CLASSES, 0.10, seed=seed, profile=cfg.dataset.profile)
        run.dataset(f"D_imb_seed{seed}", d_imb, man_imb)
        f_imb = train_classifier(d_imb, _arch(cfg), _train_cfg(cfg, seed))
        run.model(f"f_imb_seed{seed}", f_imb)
        # the attacked model is f_imb: only the imbalanced data is assumed available
        d_aug, man_aug = build_augmented(d_imb, f_imb, acfg, seed=seed, original_size=original_size,
                                         profile=cfg.dataset.profile)
        run.dataset(f"D_aug_seed{seed}", d_aug, man_aug)
        m[f"d_aug_attack_success_rate_seed{seed}"] = man_aug.attack_success_rate
        f_aug = train_classifier(d_aug, _arch(cfg), _train_cfg(cfg, seed))
        run.model(f"f_aug_seed{seed}", f_aug)
        acc_imb = metrics.per_class_accuracy(f_imb, test, reduced)
        acc_aug = metrics.per_class_accuracy(f_aug, test, reduced)
        per_seed["f_imb"].append(acc_imb)
        per_seed["f_aug"].append(acc_aug)
        avg_imb, avg_aug = np.mean(list(acc_imb.values())), np.mean(list(acc_aug.values()))
        m[f"f_imb_average_seed{seed}"] = float(avg_imb)
        m[f"f_aug_average_seed{seed}"] = float(avg_aug)
        deltas.append(float(100.0 * (avg_aug - avg_imb)))
        m[f"delta_points_seed{seed}"] = deltas[-1]
        if e.controls:
            zero = dataclasses.replace(acfg, method="FGSM", epsilon=0.0, iterations=1)
            d_zero, man_zero = build_augmented(d_imb, f_imb, zero, seed=seed, original_size=original_size,
                                               profile=cfg.dataset.profile)
            run.dataset(f"D_aug_eps0_seed{seed}", d_zero, man_zero)
            f_zero = train_classifier(d_zero, _arch(cfg), _train_cfg(cfg, seed))
            acc_zero = metrics.per_class_accuracy(f_zero, test, reduced)
            per_seed["f_eps0"].append(acc_zero)
            control_deltas.append(float(100.0 * (np.mean(list(acc_zero.values())) - avg_imb)))
            m[f"control_delta_points_seed{seed}"] = control_deltas[-1]
    m["median_delta_points"] = float(np.median(deltas))
    if control_deltas:
        m["median_control_delta_points"] = float(np.median(control_deltas))
    cols = [names[c] for c in reduced]
    rows = {}
    for label in ("f_imb", "f_aug"):
        rows[label] = [float(np.mean([acc[c] for acc in per_seed[label]])) for c in reduced]
        m[f"{label}_average"] = float(np.mean(rows[label]))
        for c, v in zip(cols, rows[label]):
            m[f"{label}_{c}"] = v
    run.report.add_table("reduced_class_accuracy", cols, rows)
    return run.finish()


RUNNERS = {
    "turing_sensitivity": run_turing_sensitivity,
    "reject_verification": run_reject_verification,
    "uap_probe": run_uap_probe,
    "nonrobust_generalization": run_nonrobust_generalization,
    "adversarial_augmentation": run_adversarial_augmentation,
}


def run_experiment(name, cfg=None, out_dir=None, **kwargs):
    try:
        runner = RUNNERS[name]
    except KeyError:
        raise ConfigurationError(f"unknown experiment {name!r}; choose from {tuple(RUNNERS)}") from None
    cfg = resolve_config(cfg, name)
    return runner(cfg, out_dir, **kwargs)


def rerun_metrics(report_or_dir):
    """Metrics from a report, for reproducibility comparisons."""
    from .reporting import load_report

    rep = report_or_dir if isinstance(report_or_dir, ExperimentReport) else load_report(report_or_dir)
    return rep.metrics


__all__ = ["run_experiment", "RUNNERS", "identity_splits", "load_image_classification",
           "FULL_SCALE_REFERENCES", "RunConfig"] + list(RUNNERS)
