"""Accuracy, attack success rate, and sensitivity curves."""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigurationError, DomainError


@dataclass(frozen=True)
class AsrInputs:
    n_wo: int
    n_w: int
    n_total: int

    def __post_init__(self):
        if self.n_total <= 0:
            raise DomainError("n_total must be positive")
        for name in ("n_wo", "n_w"):
            v = getattr(self, name)
            if not 0 <= v <= self.n_total:
                raise DomainError(f"{name} must lie in [0, n_total]")


def asr(inputs=None, *, n_wo=None, n_w=None, n_total=None):
    """Attack success rate ``(N_wo - N_w) / N_total``.

    Negative values (the perturbation helped) are returned as they are.
    """
    if inputs is None:
        inputs = AsrInputs(n_wo, n_w, n_total)
    elif not isinstance(inputs, AsrInputs):
        inputs = AsrInputs(*inputs)
    return (inputs.n_wo - inputs.n_w) / inputs.n_total


def accuracy(model, dataset):
    if len(dataset) == 0:
        raise DomainError("accuracy of an empty dataset is undefined")
    return float(np.mean(model.predict(dataset.images) == dataset.labels))


def per_class_accuracy(model, dataset, classes=None):
    """``{class_index: recall}`` on ``dataset`` for ``classes`` (default all present)."""
    pred = model.predict(dataset.images)
    classes = np.unique(dataset.labels) if classes is None else classes
    out = {}
    for c in classes:
        mask = dataset.labels == c
        if not mask.any():
            raise DomainError(f"class {c} absent from dataset")
        out[int(c)] = float(np.mean(pred[mask] == c))
    return out


def verification_counts(model, enrolled, probes):
    """Number of positive pairs that verify, and the total."""
    ok = np.atleast_1d(model.verify(enrolled, probes))
    return int(ok.sum()), len(ok)


def softmax_confidence(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class SensitivityCurve:
    kind: str
    points: list = field(default_factory=list)
    subject: str = "model"

    def __post_init__(self):
        self.points = [(int(l), float(a)) for l, a in self.points]
        levels = [l for l, _ in self.points]
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigurationError("curve levels must be strictly increasing")
        if any(not 0.0 <= a <= 1.0 for _, a in self.points):
            raise ConfigurationError("curve accuracies must lie in [0, 1]")

    @property
    def levels(self):
        return [l for l, _ in self.points]

    @property
    def accuracies(self):
        return [a for _, a in self.points]

    def ratio(self):
        """Accuracy at the last level over accuracy at level 0."""
        first = self.accuracies[0]
        return self.accuracies[-1] / first if first > 0 else float("nan")

    def spearman(self):
        """Rank correlation of level and accuracy; NaN for a flat curve."""
        if len(set(self.accuracies)) < 2:
            return float("nan")
        return float(stats.spearmanr(self.levels, self.accuracies)[0])

    def to_dict(self):
        return {"kind": self.kind, "subject": self.subject,
                "points": [{"level": l, "accuracy": a} for l, a in self.points]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], [(p["level"], p["accuracy"]) for p in d["points"]], d.get("subject", "model"))


def sensitivity_curve(model, distorted_sets, kind="adversarial"):
    """One accuracy point per distortion level, ascending."""
    if 0 not in distorted_sets:
        raise ConfigurationError("distorted sets must include level 0")
    return SensitivityCurve(kind, [(lvl, accuracy(model, distorted_sets[lvl]))
                                   for lvl in sorted(distorted_sets)])
