"""Differentiable classifiers, embedding models, and their training loops.

Images are handled as numpy arrays in ``(H, W, C)`` layout with float32
values in ``[0, 1]``; batches are ``(N, H, W, C)``. Networks run in torch
with ``(N, C, H, W)`` layout, and conversion happens at this boundary only.
"""

from __future__ import annotations

import json
import pickle
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import CapabilityError, ConfigurationError, DataError

# ---------------------------------------------------------------------------
# images and datasets


def check_image(x, shape=None):
    """Validate an image (or batch) and return it as a float32 array."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim not in (3, 4):
        raise DataError(f"expected (H, W, C) image or batch, got shape {x.shape}")
    if shape is not None and tuple(x.shape[-3:]) != tuple(shape):
        raise DataError(f"image shape {tuple(x.shape[-3:])} != expected {tuple(shape)}")
    if x.size and (np.isnan(x).any() or x.min() < 0.0 or x.max() > 1.0):
        raise DataError("image values must lie in [0, 1]")
    return x


def from_uint8(x):
    """Convert integer-encoded pixels (0..255) to the [0, 1] float range."""
    return np.asarray(x, dtype=np.float32) / np.float32(255.0)


@dataclass
class LabeledDataset:
    """Images with integer labels.

    ``images`` is ``(N, H, W, C)`` float32 in ``[0, 1]``; ``labels`` is ``(N,)``.
    """

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    split: str = "train"
    class_names: tuple = ()

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be (N, H, W, C), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError("images and labels differ in length")
        if self.split not in ("train", "test"):
            raise DataError(f"unknown split {self.split!r}")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")
        self.class_names = tuple(self.class_names or ())

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return tuple(self.images.shape[1:])

    def subset(self, index):
        index = np.asarray(index)
        return LabeledDataset(self.images[index], self.labels[index], self.class_count,
                              self.split, self.class_names)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.class_count)

    def content_hash(self):
        from .io import array_hash

        return array_hash(self.images, self.labels)


def to_tensor(x):
    """(N, H, W, C) or (H, W, C) numpy -> (N, C, H, W) torch float32."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim == 3:
        x = x[None]
    return torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2)))


def to_numpy(t):
    """(N, C, H, W) torch -> (N, H, W, C) numpy float32."""
    return t.detach().cpu().numpy().transpose(0, 2, 3, 1).astype(np.float32, copy=False)


# ---------------------------------------------------------------------------
# architectures


class Standardize(nn.Module):
    """Per-image zero-mean, unit-variance rescaling."""

    def forward(self, x):
        mean = x.mean(dim=(1, 2, 3), keepdim=True)
        std = x.std(dim=(1, 2, 3), keepdim=True)
        return (x - mean) / (std + 1e-3)


def _conv_block(cin, cout, norm=True):
    layers = [nn.Conv2d(cin, cout, 3, padding=1)]
    if norm:
        layers.append(nn.BatchNorm2d(cout))
    layers += [nn.ReLU(), nn.MaxPool2d(2)]
    return layers


def _linear(arch):
    h, w, c = arch["input_shape"]
    return nn.Sequential(nn.Flatten(), nn.Linear(h * w * c, arch["class_count"]))


def _char_cnn(arch):
    h, w, c = arch["input_shape"]
    width = arch.get("width", 16)
    layers = [Standardize()] if arch.get("standardize", True) else []
    layers += _conv_block(c, width, norm=False) + _conv_block(width, 2 * width, norm=False)
    layers += [nn.Flatten(), nn.Linear(2 * width * (h // 4) * (w // 4), arch.get("hidden", 128)),
               nn.ReLU(), nn.Linear(arch.get("hidden", 128), arch["class_count"])]
    return nn.Sequential(*layers)


def _small_cnn(arch):
    h, w, c = arch["input_shape"]
    width = arch.get("width", 32)
    layers = _conv_block(c, width) + _conv_block(width, 2 * width) + _conv_block(2 * width, 4 * width)
    layers += [nn.Flatten(), nn.Linear(4 * width * (h // 8) * (w // 8), arch.get("hidden", 128)),
               nn.ReLU(), nn.Linear(arch.get("hidden", 128), arch["class_count"])]
    return nn.Sequential(*layers)


class EmbeddingNet(nn.Module):
    """Conv backbone producing an embedding, plus a linear identity head for training."""

    def __init__(self, arch):
        super().__init__()
        h, w, c = arch["input_shape"]
        width = arch.get("width", 32)
        dim = arch["embedding_dim"]
        self.backbone = nn.Sequential(
            *_conv_block(c, width), *_conv_block(width, 2 * width), *_conv_block(2 * width, 4 * width),
            nn.Flatten(), nn.Linear(4 * width * (h // 8) * (w // 8), dim),
        )
        self.head = nn.Linear(dim, arch["class_count"])

    def forward(self, x):
        return self.head(F.relu(self.backbone(x)))


ARCHITECTURES = {
    "linear": _linear,
    "char_cnn": _char_cnn,
    "small_cnn": _small_cnn,
    "embed_cnn": EmbeddingNet,
}


def build_network(arch):
    """Instantiate the torch module named by an architecture descriptor."""
    try:
        builder = ARCHITECTURES[arch["name"]]
    except KeyError:
        raise ConfigurationError(f"unknown architecture {arch.get('name')!r}") from None
    for key in ("input_shape", "class_count"):
        if key not in arch:
            raise ConfigurationError(f"architecture descriptor lacks {key!r}")
    return builder(arch)


# ---------------------------------------------------------------------------
# models


class Classifier:
    """A trained, immutable differentiable classifier."""

    def __init__(self, arch, net, metrics=None):
        self.arch = dict(arch)
        self.net = net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.metrics = dict(metrics or {})

    @property
    def class_count(self):
        return int(self.arch["class_count"])

    @property
    def input_shape(self):
        return tuple(self.arch["input_shape"])

    def forward(self, t):
        """Logits for an (N, C, H, W) tensor; differentiable w.r.t. the input."""
        return self.net(t)

    def logits(self, x, batch_size=1024):
        x = check_image(x, self.input_shape)
        single = x.ndim == 3
        out = []
        with torch.no_grad():
            for i in range(0, len(x) if not single else 1, batch_size):
                chunk = x[None] if single else x[i:i + batch_size]
                out.append(self.net(to_tensor(chunk)).numpy())
        z = np.concatenate(out)
        return z[0] if single else z

    def predict(self, x, batch_size=1024):
        # argmax returns the lowest index among ties
        return np.argmax(self.logits(x, batch_size), axis=-1)

    def confidence(self, x):
        """Softmax probabilities."""
        z = self.logits(x)
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def input_gradient(self, x, label, loss="cross_entropy"):
        if loss != "cross_entropy":
            raise CapabilityError(f"unsupported loss {loss!r}")
        x = check_image(x, self.input_shape)
        single = x.ndim == 3
        labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise DataError("label out of range")
        t = to_tensor(x).requires_grad_(True)
        value = F.cross_entropy(self.net(t), torch.from_numpy(labels), reduction="sum")
        (grad,) = torch.autograd.grad(value, t)
        g = to_numpy(grad)
        return g[0] if single else g


def logits(model, x):
    return model.logits(x)


def predict(model, x):
    return model.predict(x)


def input_gradient(model, x, label, loss="cross_entropy"):
    """Gradient of the cross-entropy loss with respect to the input pixels."""
    if not hasattr(model, "input_gradient"):
        raise CapabilityError(f"{type(model).__name__} does not expose input gradients")
    return model.input_gradient(x, label, loss)


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    epochs: int = 5
    batch_size: int = 64
    seed: int = 0
    weight_decay: float = 0.0
    augment: str = "none"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.augment not in ("none", "flip_crop"):
            raise ConfigurationError(f"unknown augment {self.augment!r}")


def _augment(xb, gen):
    """Random horizontal flip and 4-pixel padded crop."""
    n, _, h, w = xb.shape
    flip = torch.rand(n, generator=gen) < 0.5
    xb = torch.where(flip[:, None, None, None], xb.flip(3), xb)
    padded = F.pad(xb, (4, 4, 4, 4))
    dx, dy = torch.randint(0, 9, (2,), generator=gen).tolist()
    return padded[:, :, dy:dy + h, dx:dx + w]


def _fit(net, dataset, cfg, log=None):
    gen = torch.Generator().manual_seed(cfg.seed)
    params = [p for p in net.parameters() if p.requires_grad]
    if cfg.optimizer == "adam":
        opt = torch.optim.Adam(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    else:
        opt = torch.optim.SGD(params, lr=cfg.learning_rate, momentum=0.9,
                              weight_decay=cfg.weight_decay, nesterov=True)
    x_all = to_tensor(dataset.images)
    y_all = torch.from_numpy(dataset.labels)
    history = []
    net.train()
    for epoch in range(cfg.epochs):
        perm = torch.randperm(len(y_all), generator=gen)
        total, correct, seen = 0.0, 0, 0
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            xb, yb = x_all[idx], y_all[idx]
            if cfg.augment == "flip_crop":
                xb = _augment(xb, gen)
            opt.zero_grad()
            out = net(xb)
            loss = F.cross_entropy(out, yb)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            correct += (out.argmax(1) == yb).sum().item()
            seen += len(idx)
        history.append({"epoch": epoch + 1, "loss": total / seen, "train_accuracy": correct / seen})
        if log:
            log(history[-1])
    net.eval()
    return history


def train_classifier(dataset, arch, cfg, log=None):
    """Train a classifier on ``dataset``; reproducible given ``cfg.seed``."""
    if len(dataset) == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    if dataset.split != "train":
        raise ConfigurationError("train_classifier expects a train split")
    arch = dict(arch, class_count=arch.get("class_count", dataset.class_count))
    if arch["class_count"] != dataset.class_count:
        raise ConfigurationError("architecture class_count does not match the dataset")
    arch.setdefault("input_shape", list(dataset.image_shape))
    if tuple(arch["input_shape"]) != dataset.image_shape:
        raise DataError("architecture input_shape does not match the dataset")
    arch["input_shape"] = list(arch["input_shape"])
    start = time.perf_counter()
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed)
        net = build_network(arch)
    history = _fit(net, dataset, cfg, log)
    model = Classifier(arch, net)
    model.metrics = {
        "train_accuracy": float(np.mean(model.predict(dataset.images) == dataset.labels)),
        "history": history,
        "seed": cfg.seed,
        "train_config": asdict(cfg),
        "train_seconds": time.perf_counter() - start,
    }
    return model


# ---------------------------------------------------------------------------
# embeddings and verification


class EmbeddingModel:
    """Embedding network with a cosine-similarity match threshold."""

    def __init__(self, arch, net, match_threshold=0.5, metrics=None):
        self.arch = dict(arch)
        self.net = net.eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.match_threshold = float(match_threshold)
        self.metrics = dict(metrics or {})

    @property
    def embedding_dim(self):
        return int(self.arch["embedding_dim"])

    @property
    def input_shape(self):
        return tuple(self.arch["input_shape"])

    def forward(self, t):
        """Unit-norm embeddings for an (N, C, H, W) tensor; differentiable."""
        return F.normalize(self.net.backbone(t), dim=1)

    def embed(self, x, batch_size=1024):
        x = check_image(x, self.input_shape)
        single = x.ndim == 3
        batch = x[None] if single else x
        with torch.no_grad():
            out = np.concatenate([self.forward(to_tensor(batch[i:i + batch_size])).numpy()
                                  for i in range(0, len(batch), batch_size)])
        return out[0] if single else out

    def similarity(self, a, b):
        ea, eb = self.embed(a), self.embed(b)
        return np.sum(ea * eb, axis=-1)

    def verify(self, enrolled, probe):
        return self.similarity(enrolled, probe) >= self.match_threshold


def embed(model, x):
    return model.embed(x)


def verify(model, enrolled, probe):
    """True where cosine(embed(enrolled), embed(probe)) >= the match threshold."""
    return model.verify(enrolled, probe)


def equal_error_threshold(similarities, same):
    """Cosine threshold at the equal-error-rate point of a labelled pair set.

    Candidate thresholds are the observed similarities; the one minimising
    ``|FAR - FRR|`` wins, ties resolved toward the lower threshold.
    """
    s = np.asarray(similarities, dtype=np.float64)
    same = np.asarray(same, dtype=bool)
    if not same.any() or same.all():
        raise DataError("threshold calibration needs both positive and negative pairs")
    best, best_gap = None, np.inf
    for t in np.unique(s):
        far = np.mean(s[~same] >= t)
        frr = np.mean(s[same] < t)
        if abs(far - frr) < best_gap:
            best, best_gap = t, abs(far - frr)
    return float(min(best, 1.0 - 1e-6))


def train_embedding(dataset, arch, cfg, val_pairs=None, log=None):
    """Train an embedding network through an identity-classification head.

    ``val_pairs`` is ``(a_images, b_images, same)``; when given, the match
    threshold is set at the equal-error-rate point on those pairs.
    """
    if len(dataset) == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    arch = dict(arch, name="embed_cnn", class_count=dataset.class_count,
                input_shape=list(dataset.image_shape))
    arch.setdefault("embedding_dim", 64)
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed)
        net = EmbeddingNet(arch)
    history = _fit(net, dataset, cfg, log)
    model = EmbeddingModel(arch, net)
    metrics = {"history": history, "seed": cfg.seed, "train_config": asdict(cfg)}
    if val_pairs is not None:
        a, b, same = val_pairs
        sims = model.similarity(a, b)
        model.match_threshold = equal_error_threshold(sims, same)
        pred = sims >= model.match_threshold
        metrics["val_pair_accuracy"] = float(np.mean(pred == np.asarray(same, dtype=bool)))
    metrics["match_threshold"] = model.match_threshold
    model.metrics = metrics
    return model


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model, directory, name):
    """Write ``name.pt`` (weights) and ``name.json`` (descriptor and metrics)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    torch.save(model.net.state_dict(), directory / f"{name}.pt")
    sidecar = {
        "kind": "embedding" if isinstance(model, EmbeddingModel) else "classifier",
        "arch": model.arch,
        "class_count": model.arch["class_count"],
        "seed": model.metrics.get("seed"),
        "metrics": model.metrics,
    }
    if isinstance(model, EmbeddingModel):
        sidecar["match_threshold"] = model.match_threshold
    (directory / f"{name}.json").write_text(json.dumps(sidecar, indent=2, default=float))
    return directory / f"{name}.pt"


def load_model(path):
    """Load a checkpoint written by :func:`save_model` (path to .pt or .json)."""
    path = Path(path)
    sidecar = json.loads(path.with_suffix(".json").read_text())
    net = build_network(sidecar["arch"])
    try:
        net.load_state_dict(torch.load(path.with_suffix(".pt"), weights_only=True))
    except (RuntimeError, OSError, pickle.UnpicklingError, EOFError) as exc:
        raise DataError(f"corrupt checkpoint {path}: {exc}") from exc
    if sidecar["kind"] == "embedding":
        return EmbeddingModel(sidecar["arch"], net, sidecar["match_threshold"], sidecar["metrics"])
    return Classifier(sidecar["arch"], net, sidecar["metrics"])


__all__ = [
    "LabeledDataset", "TrainConfig", "Classifier", "EmbeddingModel", "check_image",
    "from_uint8", "to_tensor", "to_numpy", "build_network", "train_classifier",
    "train_embedding", "logits", "predict", "input_gradient", "embed", "verify",
    "equal_error_threshold", "save_model", "load_model",
]
