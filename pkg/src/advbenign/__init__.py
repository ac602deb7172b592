"""Adversarial perturbations used as benign tools: attacks, derived datasets, experiments."""

from .attacks import (METHODS, AttackConfig, AttackResult, UniversalPerturbation, attack,
                      attack_batch, attack_verification, blank_probe, compose_transform_then_attack,
                      fooling_rate, project_linf, proxy_makeup, train_uap)
from .config import RunConfig, default_config, resolve_config
from .datasets import (AlphabetSpec, DerivedDatasetManifest, build_adv_dataset, build_augmented,
                       build_imbalanced, generate_alphabet, load_cifar10, rebuild)
from .distortions import DistortionSchedule, build_distorted_testset, distort
from .errors import AdvBenignError, CapabilityError, ConfigurationError, DataError, DomainError
from .metrics import SensitivityCurve, accuracy, asr, per_class_accuracy, sensitivity_curve
from .model import (Classifier, EmbeddingModel, LabeledDataset, TrainConfig, load_model, save_model,
                    train_classifier, train_embedding)
from .reporting import ExperimentReport, emit_plots, load_report

__version__ = "0.1.0"
