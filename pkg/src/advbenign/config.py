"""Run configuration files.

A run config is a YAML mapping with the sections ``dataset``, ``model``,
``train``, ``attack``, ``distortion`` and ``experiment``. Keys mirror the
typed config dataclasses one to one and unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .attacks import AttackConfig
from .distortions import DistortionSchedule
from .errors import ConfigurationError
from .model import TrainConfig

EXPERIMENTS = ("turing_sensitivity", "reject_verification", "uap_probe",
               "nonrobust_generalization", "adversarial_augmentation")


@dataclass
class DatasetConfig:
    # auto: CIFAR-10 when the archive is in the data cache, otherwise shapes10
    source: str = "auto"
    profile: str = "reduced"
    reduced_fraction: float = 0.2
    path: str | None = None
    train_per_class: int = 1000
    test_per_class: int = 200
    noise_amplitude: float = 0.3
    identities: int = 100
    images_per_identity: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.source not in ("auto", "cifar10", "shapes10", "alphabet", "identities"):
            raise ConfigurationError(f"unknown dataset source {self.source!r}")
        if self.profile not in ("full", "reduced"):
            raise ConfigurationError(f"unknown dataset profile {self.profile!r}")
        if not 0 < self.reduced_fraction <= 1:
            raise ConfigurationError("reduced_fraction must lie in (0, 1]")


@dataclass
class ModelConfig:
    name: str = "small_cnn"
    width: int = 32
    hidden: int = 128
    embedding_dim: int = 64
    standardize: bool = True

    def arch(self):
        return asdict(self)


@dataclass
class ExperimentConfig:
    name: str = "uap_probe"
    seed: int = 0
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    uap_epsilon: float = 16 / 255
    uap_step_size: float = 1 / 255
    uap_epochs: int = 5
    controls: bool = True

    def __post_init__(self):
        if self.name not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.name!r}; choose from {EXPERIMENTS}")
        if not self.seeds:
            raise ConfigurationError("seeds must be non-empty")


SECTIONS = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "attack": AttackConfig,
    "distortion": DistortionSchedule,
    "experiment": ExperimentConfig,
}


@dataclass
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    distortion: DistortionSchedule = field(default_factory=DistortionSchedule)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def to_dict(self):
        return {name: asdict(getattr(self, name)) for name in SECTIONS}

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a mapping of sections")
        unknown = sorted(set(data) - set(SECTIONS))
        errors = [f"unknown section: {k}" for k in unknown]
        sections = {}
        for name, section_cls in SECTIONS.items():
            body = data.get(name) or {}
            if not isinstance(body, dict):
                errors.append(f"section {name} must be a mapping")
                continue
            known = {f.name for f in dataclasses.fields(section_cls)}
            errors += [f"unknown key: {name}.{k}" for k in sorted(set(body) - known)]
            try:
                sections[name] = section_cls(**{k: v for k, v in body.items() if k in known})
            except (ConfigurationError, TypeError, ValueError) as exc:
                errors.append(f"{name}: {exc}")
        if errors:
            raise ConfigurationError("invalid config: " + "; ".join(errors))
        return cls(**sections)

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text):
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config is not valid YAML: {exc}") from exc
        return cls.from_dict(data or {})

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path):
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        return cls.loads(p.read_text())


def default_config(name):
    """Desk-scale defaults for experiment ``name``."""
    exp = ExperimentConfig(name=name)
    if name == "turing_sensitivity":
        return RunConfig(
            dataset=DatasetConfig(source="alphabet", profile="full"),
            model=ModelConfig(name="char_cnn", width=16, hidden=128),
            train=TrainConfig(optimizer="adam", learning_rate=1e-5, epochs=10, batch_size=32),
            distortion=DistortionSchedule(),
            experiment=exp,
        )
    if name == "reject_verification":
        return RunConfig(
            dataset=DatasetConfig(source="identities", profile="full", identities=100, images_per_identity=8),
            model=ModelConfig(name="embed_cnn", width=16, embedding_dim=64),
            train=TrainConfig(learning_rate=1e-3, epochs=15, batch_size=64),
            attack=AttackConfig(method="FGSM", epsilon=8 / 255, step_size=8 / 255, iterations=1),
            experiment=exp,
        )
    # CIFAR-10 family
    if name == "nonrobust_generalization":
        # f_ori needs the full split and augmentation to clear 80% clean accuracy
        return RunConfig(
            dataset=DatasetConfig(source="auto", profile="full", train_per_class=1000, test_per_class=200),
            model=ModelConfig(name="small_cnn", width=32, hidden=128),
            train=TrainConfig(learning_rate=1e-3, epochs=12, batch_size=64, augment="flip_crop"),
            attack=AttackConfig(method="I-FGSM", epsilon=8 / 255, step_size=2 / 255, iterations=10,
                                targeted=True),
            experiment=exp,
        )
    return RunConfig(
        dataset=DatasetConfig(source="auto", profile="reduced", reduced_fraction=0.2,
                              train_per_class=1000, test_per_class=200),
        model=ModelConfig(name="small_cnn", width=32, hidden=128),
        train=TrainConfig(learning_rate=1e-3, epochs=8, batch_size=64, augment="none"),
        attack=AttackConfig(method="I-FGSM", epsilon=8 / 255, step_size=2 / 255, iterations=10,
                            targeted=True),
        experiment=exp,
    )


def resolve_config(spec, name=None):
    """``spec`` is a RunConfig, a path, or the word ``default``."""
    if isinstance(spec, RunConfig):
        cfg = spec
    elif spec in (None, "default"):
        if name is None:
            raise ConfigurationError("default config needs an experiment name")
        cfg = default_config(name)
    else:
        cfg = RunConfig.load(spec)
    if name is not None and cfg.experiment.name != name:
        cfg.experiment = dataclasses.replace(cfg.experiment, name=name)
    return cfg
