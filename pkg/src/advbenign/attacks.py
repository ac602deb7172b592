"""Sign-gradient attacks inside an L-infinity ball, and universal perturbations.

All five methods share one loop. FGSM is the one-iteration case; the
iterative variants add momentum (MI), random resize-and-pad input diversity
(DI), or both. Every iterate is projected back onto
``[x - eps, x + eps] ∩ [0, 1]``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from .errors import CapabilityError, ConfigurationError, DataError
from .model import EmbeddingModel, check_image, to_numpy, to_tensor

METHODS = ("FGSM", "I-FGSM", "MI-FGSM", "DI2-FGSM", "D-MI2-FGSM")
_MOMENTUM = {"MI-FGSM", "D-MI2-FGSM"}
_DIVERSE = {"DI2-FGSM", "D-MI2-FGSM"}


@dataclass
class AttackConfig:
    method: str = "I-FGSM"
    epsilon: float = 8 / 255
    step_size: float = 2 / 255
    iterations: int = 10
    momentum_decay: float = 1.0
    diversity_prob: float = 0.5
    resize_min: float = 0.9
    targeted: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown attack method {self.method!r}; choose from {METHODS}")
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be >= 0")
        # epsilon == 0 is the zero-budget control: any step is projected away
        if self.epsilon > 0 and not 0 < self.step_size <= self.epsilon + 1e-12:
            raise ConfigurationError("step_size must satisfy 0 < step_size <= epsilon")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if self.method == "FGSM" and self.iterations != 1:
            raise ConfigurationError("FGSM runs exactly one iteration")
        if self.momentum_decay < 0:
            raise ConfigurationError("momentum_decay must be >= 0")
        if not 0.0 <= self.diversity_prob <= 1.0:
            raise ConfigurationError("diversity_prob must lie in [0, 1]")
        if not 0.0 < self.resize_min <= 1.0:
            raise ConfigurationError("resize_min must lie in (0, 1]")

    @classmethod
    def for_method(cls, method, epsilon=8 / 255, **overrides):
        """Default settings for ``method``; FGSM takes one step of size epsilon."""
        if method == "FGSM":
            overrides.setdefault("step_size", epsilon)
            overrides.setdefault("iterations", 1)
        else:
            overrides.setdefault("step_size", min(2 / 255, epsilon) if epsilon > 0 else 2 / 255)
        return cls(method=method, epsilon=epsilon, **overrides)

    def to_dict(self):
        return asdict(self)


@dataclass
class AttackResult:
    """Outcome of an attack on one image, or on a batch when fields are arrays."""

    adversarial: np.ndarray
    success: np.ndarray | bool
    iterations: int
    final_loss: np.ndarray | float
    provenance: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# primitives


def project_linf(candidate, origin, epsilon):
    """Clamp ``candidate`` elementwise into ``[origin - eps, origin + eps] ∩ [0, 1]``."""
    candidate = np.asarray(candidate, dtype=np.float32)
    origin = np.asarray(origin, dtype=np.float32)
    if candidate.shape != origin.shape:
        raise DataError("candidate and origin shapes differ")
    eps = np.float32(epsilon)
    return np.clip(np.clip(candidate, origin - eps, origin + eps), 0.0, 1.0)


def _project(t, origin, epsilon):
    eps = float(epsilon)
    return torch.clamp(torch.minimum(torch.maximum(t, origin - eps), origin + eps), 0.0, 1.0)


def apply_perturbation(x, delta):
    """``clip(x + delta, 0, 1)``."""
    x = np.asarray(x, dtype=np.float32)
    delta = np.asarray(delta, dtype=np.float32)
    if x.shape[-delta.ndim:] != delta.shape:
        raise DataError("image and perturbation shapes differ")
    return np.clip(x + delta, 0.0, 1.0)


def input_diversity(t, resize_min, gen):
    """Randomly shrink to between ``resize_min`` and 100% of the side, zero-pad back."""
    _, _, h, w = t.shape
    lo = int(np.floor(resize_min * min(h, w)))
    size = int(torch.randint(lo, min(h, w) + 1, (1,), generator=gen))
    if size == min(h, w) and h == w:
        return t
    resized = F.interpolate(t, size=(size, size), mode="nearest")
    pad_h, pad_w = h - size, w - size
    top = int(torch.randint(0, pad_h + 1, (1,), generator=gen))
    left = int(torch.randint(0, pad_w + 1, (1,), generator=gen))
    return F.pad(resized, (left, pad_w - left, top, pad_h - top))


def _sign_attack(x0, objective, cfg, gen):
    """Ascend ``objective`` (per-sample values) with sign steps; returns the final iterate."""
    x = x0.clone()
    momentum = torch.zeros_like(x0)
    use_momentum = cfg.method in _MOMENTUM
    use_diversity = cfg.method in _DIVERSE
    for _ in range(cfg.iterations):
        xr = x.detach().requires_grad_(True)
        inp = xr
        if use_diversity and float(torch.rand(1, generator=gen)) < cfg.diversity_prob:
            inp = input_diversity(xr, cfg.resize_min, gen)
        (grad,) = torch.autograd.grad(objective(inp).sum(), xr)
        if use_momentum:
            l1 = grad.abs().sum(dim=(1, 2, 3), keepdim=True).clamp_min(1e-12)
            momentum = cfg.momentum_decay * momentum + grad / l1
            grad = momentum
        x = _project(x.detach() + cfg.step_size * grad.sign(), x0, cfg.epsilon)
    return x.detach()


def _require_forward(model):
    if not hasattr(model, "forward") or not hasattr(model, "net"):
        raise CapabilityError(f"{type(model).__name__} does not expose a differentiable forward pass")


def sign_step(model, x, labels, step_size):
    """One unconstrained FGSM step of ``step_size`` away from ``labels``, clipped to [0, 1]."""
    _require_forward(model)
    x = check_image(x, model.input_shape)
    single = x.ndim == 3
    t = to_tensor(x)
    y = torch.as_tensor(np.atleast_1d(labels), dtype=torch.int64)
    tr = t.clone().requires_grad_(True)
    (grad,) = torch.autograd.grad(F.cross_entropy(model.forward(tr), y, reduction="sum"), tr)
    out = to_numpy(torch.clamp(t + step_size * grad.sign(), 0.0, 1.0))
    return out[0] if single else out


# ---------------------------------------------------------------------------
# classifier attacks


def attack_batch(model, images, labels, cfg, batch_size=256):
    """Attack a batch. ``labels`` are true labels (untargeted) or targets (targeted)."""
    _require_forward(model)
    images = check_image(images, model.input_shape)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(images),):
        raise DataError("one label per image is required")
    if len(labels) and (labels.min() < 0 or labels.max() >= model.class_count):
        raise DataError("label out of range")
    gen = torch.Generator().manual_seed(cfg.seed)
    sign = -1.0 if cfg.targeted else 1.0
    adv, losses = [], []
    for i in range(0, len(images), batch_size):
        x0 = to_tensor(images[i:i + batch_size])
        y = torch.from_numpy(labels[i:i + batch_size])

        def objective(inp, y=y):
            return sign * F.cross_entropy(model.forward(inp), y, reduction="none")

        xa = _sign_attack(x0, objective, cfg, gen)
        with torch.no_grad():
            losses.append(F.cross_entropy(model.forward(xa), y, reduction="none").numpy())
        adv.append(to_numpy(xa))
    adversarial = np.concatenate(adv) if adv else np.empty_like(images)
    pred = model.predict(adversarial) if len(adversarial) else np.empty(0, dtype=np.int64)
    success = pred == labels if cfg.targeted else pred != labels
    return AttackResult(adversarial, success, cfg.iterations,
                        np.concatenate(losses) if losses else np.empty(0, np.float32),
                        {"attack": cfg.to_dict()})


def attack(model, x, label, cfg):
    """Attack one image; ``label`` is the true class, or the target when ``cfg.targeted``."""
    if isinstance(model, EmbeddingModel):
        raise CapabilityError("use attack_verification for embedding models")
    x = check_image(x, getattr(model, "input_shape", None))
    if x.ndim != 3:
        raise DataError("attack takes a single (H, W, C) image; use attack_batch for batches")
    res = attack_batch(model, x[None], [label], cfg)
    return AttackResult(res.adversarial[0], bool(res.success[0]), res.iterations,
                        float(res.final_loss[0]), res.provenance)


# ---------------------------------------------------------------------------
# verification attacks


def attack_verification(model, probes, enrolled, cfg, batch_size=256):
    """Dodging attack: push each probe's embedding away from its enrolled image.

    The objective is ``-cosine(embed(probe'), embed(enrolled))``. Success means
    the perturbed probe no longer verifies against its enrolled image.
    """
    if not isinstance(model, EmbeddingModel):
        raise CapabilityError("attack_verification needs an EmbeddingModel")
    if cfg.targeted:
        raise ConfigurationError("verification attacks are untargeted (dodging)")
    probes = check_image(probes, model.input_shape)
    enrolled = check_image(enrolled, model.input_shape)
    single = probes.ndim == 3
    if single:
        probes, enrolled = probes[None], enrolled[None]
    if probes.shape != enrolled.shape:
        raise DataError("probes and enrolled images must pair up one to one")
    gen = torch.Generator().manual_seed(cfg.seed)
    ref = torch.from_numpy(model.embed(enrolled))
    adv, losses = [], []
    for i in range(0, len(probes), batch_size):
        x0 = to_tensor(probes[i:i + batch_size])
        r = ref[i:i + batch_size]

        def objective(inp, r=r):
            return -(model.forward(inp) * r).sum(dim=1)

        xa = _sign_attack(x0, objective, cfg, gen)
        with torch.no_grad():
            losses.append(objective(xa).numpy())
        adv.append(to_numpy(xa))
    adversarial = np.concatenate(adv)
    success = ~model.verify(enrolled, adversarial)
    loss = np.concatenate(losses)
    if single:
        return AttackResult(adversarial[0], bool(success[0]), cfg.iterations, float(loss[0]),
                            {"attack": cfg.to_dict()})
    return AttackResult(adversarial, success, cfg.iterations, loss, {"attack": cfg.to_dict()})


# ---------------------------------------------------------------------------
# pre-transform composition


def proxy_makeup(x, sigma=0.8, shift=(0.05, -0.02, 0.03)):
    """Deterministic stand-in for a makeup filter: Gaussian blur plus a colour shift."""
    x = np.asarray(x, dtype=np.float32)
    spatial = (sigma, sigma, 0) if x.ndim == 3 else (0, sigma, sigma, 0)
    out = ndimage.gaussian_filter(x, sigma=spatial, mode="nearest")
    shift = np.asarray(shift, dtype=np.float32)[: x.shape[-1]]
    return np.clip(out + shift, 0.0, 1.0).astype(np.float32)


def compose_transform_then_attack(model, x, pre_transform, cfg, label=None, enrolled=None):
    """Apply ``pre_transform`` and then attack the transformed image.

    For an EmbeddingModel ``enrolled`` is required and the dodging attack runs;
    otherwise ``label`` is passed to :func:`attack_batch`.
    """
    transformed = np.asarray(pre_transform(x), dtype=np.float32)
    if transformed.shape != np.shape(x):
        raise DataError("pre_transform changed the image shape")
    if transformed.size and (np.isnan(transformed).any() or transformed.min() < 0 or transformed.max() > 1):
        raise DataError("pre_transform produced values outside [0, 1]")
    if isinstance(model, EmbeddingModel):
        if enrolled is None:
            raise ConfigurationError("enrolled images are required for verification models")
        res = attack_verification(model, transformed, enrolled, cfg)
    elif transformed.ndim == 3:
        res = attack(model, transformed, label, cfg)
    else:
        res = attack_batch(model, transformed, label, cfg)
    res.provenance = {
        "stages": [
            {"stage": "pre_transform", "name": getattr(pre_transform, "__name__", repr(pre_transform))},
            {"stage": "attack", **cfg.to_dict()},
        ]
    }
    return res


# ---------------------------------------------------------------------------
# universal perturbations


@dataclass
class UniversalPerturbation:
    delta: np.ndarray
    target_class: int
    epsilon: float
    fooling_rate: float | None = None

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.float32)
        if np.abs(self.delta).max(initial=0.0) > self.epsilon + 1e-6:
            raise DataError("perturbation exceeds its epsilon bound")

    def apply(self, x):
        return apply_perturbation(x, self.delta)

    def save(self, directory, name):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        np.save(directory / f"{name}.npy", self.delta)
        meta = {"target_class": self.target_class, "epsilon": self.epsilon,
                "fooling_rate": self.fooling_rate, "shape": list(self.delta.shape)}
        (directory / f"{name}.json").write_text(json.dumps(meta, indent=2))
        return directory / f"{name}.npy"

    @classmethod
    def load(cls, path):
        path = Path(path)
        meta = json.loads(path.with_suffix(".json").read_text())
        delta = np.load(path.with_suffix(".npy"))
        return cls(delta, meta["target_class"], meta["epsilon"], meta.get("fooling_rate"))


def train_uap(model, dataset, target_class, epsilon, epochs, step_size, seed, batch_size=128):
    """Targeted universal perturbation by batched sign-gradient descent on one shared delta.

    Images already labelled ``target_class`` are skipped. After each step the
    shared delta is clipped back to ``[-epsilon, epsilon]``.
    """
    _require_forward(model)
    if epsilon <= 0:
        raise ConfigurationError("epsilon must be > 0")
    if not 0 <= target_class < model.class_count:
        raise ConfigurationError("target_class out of range")
    keep = dataset.labels != target_class
    if not keep.any():
        raise ConfigurationError("dataset has no images outside the target class")
    x_all = to_tensor(dataset.images[keep])
    gen = torch.Generator().manual_seed(seed)
    delta = torch.zeros((1,) + tuple(x_all.shape[1:]))
    for _ in range(epochs):
        perm = torch.randperm(len(x_all), generator=gen)
        for i in range(0, len(perm), batch_size):
            xb = x_all[perm[i:i + batch_size]]
            d = delta.clone().requires_grad_(True)
            out = model.forward(torch.clamp(xb + d, 0.0, 1.0))
            target = torch.full((len(xb),), target_class, dtype=torch.int64)
            (grad,) = torch.autograd.grad(F.cross_entropy(out, target), d)
            delta = torch.clamp(delta - step_size * grad.sign(), -epsilon, epsilon)
    uap = UniversalPerturbation(to_numpy(delta)[0], int(target_class), float(epsilon))
    uap.fooling_rate = fooling_rate(model, dataset, uap)
    return uap


def fooling_rate(model, dataset, uap):
    """Fraction of images outside the target class that the perturbation sends to it."""
    keep = dataset.labels != uap.target_class
    if not keep.any():
        raise DataError("no images outside the target class")
    pred = model.predict(uap.apply(dataset.images[keep]))
    return float(np.mean(pred == uap.target_class))


def blank_probe(model, uap, gray=0.5):
    """Prediction and softmax confidence for a uniform gray image plus the perturbation."""
    blank = np.full(model.input_shape, gray, dtype=np.float32)
    probs = model.confidence(uap.apply(blank))
    pred = int(np.argmax(probs))
    return pred, float(probs[pred]), float(probs[uap.target_class])
