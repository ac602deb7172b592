"""Command-line entry point.

Exit codes: 0 success, 2 usage, 3 config validation, 4 data, 5 runtime.
Failures print a one-line JSON object to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import AdvBenignError, DataError

EXIT_USAGE = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _fail(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": str(message), "exit_code": code}) + "\n")
    return code


def _load_images(path):
    """Images from a dataset ``.npz`` or a raw ``.npy`` array; labels may be absent."""
    from .io import load_dataset

    path = Path(path)
    if path.suffix == ".npy":
        if not path.is_file():
            raise DataError(f"no such file: {path}")
        return np.load(path), None
    ds, _ = load_dataset(path)
    return ds.images, ds.labels


def _cmd_gen_data(args):
    from .datasets import AlphabetSpec, generate_alphabet, load_cifar10
    from .io import save_dataset
    from .synthetic import make_identities, make_shapes10
    from .model import LabeledDataset

    out = Path(args.out)
    if args.kind == "alphabet":
        train, test = generate_alphabet(AlphabetSpec(train_per_class=args.train_per_class,
                                                     test_per_class=args.test_per_class,
                                                     noise_amplitude=args.noise_amplitude,
                                                     seed=args.seed))
    elif args.kind == "shapes10":
        train, test = make_shapes10(args.train_per_class, args.test_per_class, seed=args.seed)
    elif args.kind == "cifar10":
        train, test = load_cifar10(args.path)
    else:
        images, labels = make_identities(args.identities, args.images_per_identity, seed=args.seed)
        train = LabeledDataset(images, labels, args.identities, "train")
        test = None
    written = {"train": str(save_dataset(train, out, f"{args.kind}_train"))}
    if test is not None:
        written["test"] = str(save_dataset(test, out, f"{args.kind}_test"))
    return written


def _cmd_train(args):
    from .config import resolve_config
    from .io import load_dataset
    from .model import save_model, train_classifier

    cfg = resolve_config(args.config, args.experiment)
    ds, _ = load_dataset(args.data)
    model = train_classifier(ds, cfg.model.arch(), cfg.train)
    path = save_model(model, args.out, args.name)
    return {"checkpoint": str(path), "train_accuracy": model.metrics["train_accuracy"]}


def _attack_config(args):
    from .attacks import AttackConfig

    kw = {"targeted": args.target is not None, "seed": args.seed}
    if args.step_size is not None:
        kw["step_size"] = args.step_size
    if args.iterations is not None:
        kw["iterations"] = args.iterations
    return AttackConfig.for_method(args.method, epsilon=args.epsilon, **kw)


def _cmd_attack(args):
    from .attacks import attack_batch
    from .model import load_model

    cfg = _attack_config(args)
    model = load_model(args.model)
    images, labels = _load_images(args.data)
    if args.target is not None:
        labels = np.full(len(images), args.target, dtype=np.int64)
    elif labels is None:
        labels = model.predict(images)
    res = attack_batch(model, images, labels, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.save(out, res.adversarial)
    return {"adversarial": str(out), "success_rate": float(np.mean(res.success)),
            "attack": cfg.to_dict()}


def _cmd_uap(args):
    from .attacks import blank_probe, fooling_rate, train_uap
    from .io import load_dataset
    from .model import load_model

    model = load_model(args.model)
    ds, _ = load_dataset(args.data)
    uap = train_uap(model, ds, args.target, args.epsilon, args.epochs, args.step_size, seed=args.seed)
    if args.test:
        uap.fooling_rate = fooling_rate(model, load_dataset(args.test)[0], uap)
    pred, conf, target_conf = blank_probe(model, uap)
    path = uap.save(args.out, f"uap_{args.target}")
    return {"uap": str(path), "fooling_rate": uap.fooling_rate, "blank_prediction": pred,
            "blank_confidence": conf, "blank_target_confidence": target_conf}


def _cmd_distort(args):
    from .distortions import DistortionSchedule, distort
    from .model import load_model

    images, labels = _load_images(args.data)
    model = load_model(args.model) if args.model else None
    schedule = DistortionSchedule(kind=args.kind, seed=args.seed)
    out_images = distort(images, model, schedule, args.level, labels)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.save(out, out_images)
    return {"distorted": str(out), "level": args.level, "schedule": schedule.to_dict()}


def _cmd_run_experiment(args):
    from .experiments import run_experiment

    report = run_experiment(args.name, args.config, args.out, save_datasets=not args.no_datasets)
    return {"report": str(Path(args.out) / "report.json"), "metrics": report.metrics,
            "wall_clock_seconds": report.wall_clock_seconds}


def _cmd_report(args):
    from .reporting import emit_plots, load_report, report_csv

    report = load_report(args.input)
    if args.format == "json":
        sys.stdout.write(json.dumps(report.to_dict(), indent=2) + "\n")
    elif args.format == "csv":
        sys.stdout.write(report_csv(report))
    else:
        out = Path(args.out) if args.out else Path(args.input) / "plots"
        for p in emit_plots(report, out):
            print(p)
    return None


def build_parser():
    from .attacks import METHODS
    from .config import EXPERIMENTS

    p = _Parser(prog="advbenign", description="Adversarial perturbations as benign tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate or ingest a base dataset")
    g.add_argument("--kind", choices=("alphabet", "shapes10", "identities", "cifar10"), required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--path", help="CIFAR-10 archive or directory")
    g.add_argument("--train-per-class", type=int, default=1000)
    g.add_argument("--test-per-class", type=int, default=200)
    g.add_argument("--noise-amplitude", type=float, default=0.3)
    g.add_argument("--identities", type=int, default=100)
    g.add_argument("--images-per-identity", type=int, default=8)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("train", help="train a classifier on a dataset .npz")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default="default")
    t.add_argument("--experiment", choices=EXPERIMENTS, default="uap_probe",
                   help="which experiment's default config to use with --config default")
    t.add_argument("--out", required=True)
    t.add_argument("--name", default="model")
    t.set_defaults(func=_cmd_train)

    a = sub.add_parser("attack", help="attack images with a saved classifier")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True, help="dataset .npz or images .npy")
    a.add_argument("--method", choices=METHODS, default="FGSM")
    a.add_argument("--epsilon", type=float, default=8 / 255)
    a.add_argument("--step-size", type=float)
    a.add_argument("--iterations", type=int)
    a.add_argument("--target", type=int, help="target class; untargeted when omitted")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True, help="output .npy")
    a.set_defaults(func=_cmd_attack)

    u = sub.add_parser("uap", help="train a targeted universal perturbation")
    u.add_argument("--model", required=True)
    u.add_argument("--data", required=True)
    u.add_argument("--test", help="held-out dataset for the fooling rate")
    u.add_argument("--target", type=int, required=True)
    u.add_argument("--epsilon", type=float, default=16 / 255)
    u.add_argument("--step-size", type=float, default=1 / 255)
    u.add_argument("--epochs", type=int, default=5)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--out", required=True)
    u.set_defaults(func=_cmd_uap)

    d = sub.add_parser("distort", help="apply a cumulative distortion level")
    d.add_argument("--data", required=True)
    d.add_argument("--model", help="required for adversarial distortion")
    d.add_argument("--kind", choices=("adversarial", "gaussian"), required=True)
    d.add_argument("--level", type=int, required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=_cmd_distort)

    r = sub.add_parser("run-experiment", help="run one named experiment end to end")
    r.add_argument("--name", choices=EXPERIMENTS, required=True)
    r.add_argument("--config", default="default", help="YAML config path or 'default'")
    r.add_argument("--out", required=True)
    r.add_argument("--no-datasets", action="store_true", help="write manifests but not dataset blobs")
    r.set_defaults(func=_cmd_run_experiment)

    rp = sub.add_parser("report", help="re-emit a run's report")
    rp.add_argument("--in", dest="input", required=True)
    rp.add_argument("--format", choices=("json", "csv", "plots"), default="json")
    rp.add_argument("--out", help="plot directory")
    rp.set_defaults(func=_cmd_report)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except _UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except AdvBenignError as exc:
        return _fail(type(exc).__name__, exc, exc.exit_code)
    except (OSError, RuntimeError, ValueError) as exc:
        return _fail(type(exc).__name__, exc, 5)
    if result is not None:
        sys.stdout.write(json.dumps(result, default=float) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
