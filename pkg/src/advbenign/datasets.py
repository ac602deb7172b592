"""Dataset construction: synthetic alphabet, CIFAR-10 ingestion, derived sets.

The derived sets are

* ``D_adv``: every training image attacked toward a random other class and
  relabelled with that class;
* ``D_imb``: four classes kept at a fraction of their size;
* ``D_aug``: ``D_imb`` plus images from the other six classes attacked
  toward each reduced class.

Every builder returns ``(dataset, manifest)``; the manifest plus the source
dataset is enough to rebuild the derived set bit for bit.
"""

from __future__ import annotations

import hashlib
import os
import pickle
import string
import tarfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .attacks import AttackConfig, attack_batch
from .errors import ConfigurationError, DataError
from .model import LabeledDataset, from_uint8

CIFAR10_CLASSES = ("airplane", "automobile", "bird", "cat", "deer",
                   "dog", "frog", "horse", "ship", "truck")
REDUCED_CLASSES = ("frog", "horse", "ship", "truck")
CIFAR10_TAR_MD5 = "c58f30108f718f92721af3b95e74349a"


def data_dir():
    """Cache directory for external datasets (``ADVBENIGN_DATA``, default ``~/.cache/advbenign``)."""
    return Path(os.environ.get("ADVBENIGN_DATA", Path.home() / ".cache" / "advbenign"))


# ---------------------------------------------------------------------------
# alphabet


@dataclass
class AlphabetSpec:
    class_count: int = 26
    train_per_class: int = 1000
    test_per_class: int = 200
    side: int = 28
    font_size: int = 20
    stroke_width: int = 1
    noise_amplitude: float = 0.3
    font_path: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.class_count != 26:
            raise ConfigurationError("the alphabet has exactly 26 classes")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ConfigurationError("per-class counts must be positive")
        if not 0.0 <= self.noise_amplitude <= 1.0:
            raise ConfigurationError("noise_amplitude must lie in [0, 1]")


def _load_font(spec):
    if spec.font_path is None:
        # Pillow bundles an open-licensed TrueType face for load_default(size=...)
        return ImageFont.load_default(size=spec.font_size)
    if not Path(spec.font_path).is_file():
        raise ConfigurationError(f"glyph source not found: {spec.font_path}")
    return ImageFont.truetype(spec.font_path, spec.font_size)


def render_glyphs(spec):
    """Centred white-on-black renders of A..Z, shape (26, side, side), values in [0, 1]."""
    font = _load_font(spec)
    out = np.empty((26, spec.side, spec.side), dtype=np.float32)
    for i, ch in enumerate(string.ascii_uppercase):
        im = Image.new("L", (spec.side, spec.side), 0)
        draw = ImageDraw.Draw(im)
        left, top, right, bottom = draw.textbbox((0, 0), ch, font=font, stroke_width=spec.stroke_width)
        xy = ((spec.side - (right - left)) / 2 - left, (spec.side - (bottom - top)) / 2 - top)
        draw.text(xy, ch, fill=255, font=font, stroke_width=spec.stroke_width, stroke_fill=255)
        out[i] = from_uint8(np.asarray(im))
    return out


def _alphabet_split(glyphs, per_class, amplitude, rng, split):
    labels = np.repeat(np.arange(26), per_class)
    noise = rng.uniform(0.0, amplitude, size=(len(labels),) + glyphs.shape[1:]).astype(np.float32)
    images = np.maximum(glyphs[labels], noise)[..., None]
    return LabeledDataset(images, labels, 26, split, tuple(string.ascii_uppercase))


def generate_alphabet(spec=None):
    """Noisy single-letter images: ``(train, test)`` with 26 classes."""
    spec = spec or AlphabetSpec()
    glyphs = render_glyphs(spec)
    rng = np.random.default_rng(spec.seed)
    train = _alphabet_split(glyphs, spec.train_per_class, spec.noise_amplitude, rng, "train")
    test = _alphabet_split(glyphs, spec.test_per_class, spec.noise_amplitude, rng, "test")
    return train, test


# ---------------------------------------------------------------------------
# CIFAR-10


def _md5(path):
    h = hashlib.md5()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_batches(members):
    images, labels = [], []
    for raw in members:
        try:
            batch = pickle.loads(raw, encoding="bytes")
            data = np.asarray(batch[b"data"], dtype=np.uint8)
            lab = np.asarray(batch[b"labels"], dtype=np.int64)
        except Exception as exc:  # noqa: BLE001 - any unpickling failure is a data error
            raise DataError(f"malformed CIFAR-10 batch: {exc}") from exc
        if data.ndim != 2 or data.shape[1] != 3072 or len(data) != len(lab):
            raise DataError(f"CIFAR-10 batch has shape {data.shape}, expected (n, 3072)")
        images.append(data.reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1))
        labels.append(lab)
    return np.concatenate(images), np.concatenate(labels)


def load_cifar10(path=None, expected_sizes=(50000, 10000), verify_checksum=None):
    """Read the python-pickle CIFAR-10 release.

    ``path`` may be the ``cifar-10-python.tar.gz`` archive or the extracted
    ``cifar-10-batches-py`` directory; it defaults to the data cache. The
    archive's MD5 is checked when it is the official file name (or when
    ``verify_checksum`` is true). Nothing is returned unless every batch parses
    and the split sizes match ``expected_sizes``.
    """
    path = Path(path) if path is not None else data_dir() / "cifar-10-python.tar.gz"
    if not path.exists() and path.with_name("cifar-10-batches-py").is_dir():
        path = path.with_name("cifar-10-batches-py")
    if not path.exists():
        raise DataError(f"CIFAR-10 not found at {path}")
    train_names = [f"data_batch_{i}" for i in range(1, 6)]
    if path.is_dir():
        try:
            train_raw = [(path / n).read_bytes() for n in train_names]
            test_raw = [(path / "test_batch").read_bytes()]
        except OSError as exc:
            raise DataError(f"incomplete CIFAR-10 directory: {exc}") from exc
    else:
        if verify_checksum or (verify_checksum is None and path.name == "cifar-10-python.tar.gz"):
            if _md5(path) != CIFAR10_TAR_MD5:
                raise DataError("CIFAR-10 archive checksum mismatch")
        try:
            with tarfile.open(path, "r:gz") as tar:
                by_name = {Path(m.name).name: m for m in tar.getmembers() if m.isfile()}
                train_raw = [tar.extractfile(by_name[n]).read() for n in train_names]
                test_raw = [tar.extractfile(by_name["test_batch"]).read()]
        except (tarfile.TarError, OSError, EOFError, KeyError) as exc:
            raise DataError(f"unreadable CIFAR-10 archive: {exc}") from exc
    xtr, ytr = _read_batches(train_raw)
    xte, yte = _read_batches(test_raw)
    if expected_sizes is not None and (len(xtr), len(xte)) != tuple(expected_sizes):
        raise DataError(f"CIFAR-10 sizes {(len(xtr), len(xte))} != {tuple(expected_sizes)}")
    if ytr.min() < 0 or ytr.max() > 9 or yte.min() < 0 or yte.max() > 9:
        raise DataError("CIFAR-10 labels outside 0..9")
    train = LabeledDataset(from_uint8(xtr), ytr, 10, "train", CIFAR10_CLASSES)
    test = LabeledDataset(from_uint8(xte), yte, 10, "test", CIFAR10_CLASSES)
    return train, test


def write_cifar10_archive(path, train, test):
    """Write uint8-encoded splits in the CIFAR-10 python tarball layout (test fixtures, reduced sets)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def encode(ds):
        data = np.round(ds.images * 255).astype(np.uint8).transpose(0, 3, 1, 2).reshape(len(ds), -1)
        return data, ds.labels.tolist()

    xtr, ytr = encode(train)
    chunks = np.array_split(np.arange(len(ytr)), 5)
    import io as _io

    with tarfile.open(path, "w:gz") as tar:
        def add(name, data, labels):
            blob = pickle.dumps({b"data": data, b"labels": labels})
            info = tarfile.TarInfo(f"cifar-10-batches-py/{name}")
            info.size = len(blob)
            tar.addfile(info, _io.BytesIO(blob))

        for i, idx in enumerate(chunks, start=1):
            add(f"data_batch_{i}", xtr[idx], [ytr[j] for j in idx])
        xte, yte = encode(test)
        add("test_batch", xte, yte)
    return path


def reduced_profile(dataset, fraction, seed):
    """Stratified per-class subsample; the "reduced" desk-scale profile."""
    if not 0 < fraction <= 1:
        raise ConfigurationError("fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(dataset.class_count):
        idx = np.flatnonzero(dataset.labels == c)
        n = int(round(len(idx) * fraction))
        keep.append(np.sort(rng.choice(idx, size=n, replace=False)))
    return dataset.subset(np.sort(np.concatenate(keep)))


# ---------------------------------------------------------------------------
# derived datasets


@dataclass
class DerivedDatasetManifest:
    kind: str
    source_id: str
    seed: int
    class_counts: list
    attack: dict | None = None
    reduced_classes: list | None = None
    fraction: float | None = None
    source_index: list = field(default_factory=list)
    original_label: list = field(default_factory=list)
    target_label: list = field(default_factory=list)
    attack_success_rate: float | None = None
    profile: str = "full"
    content_hash: str = ""

    def __post_init__(self):
        if self.kind not in ("D_adv", "D_imb", "D_aug"):
            raise ConfigurationError(f"unknown derived dataset kind {self.kind!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _class_index(dataset, name_or_index):
    if isinstance(name_or_index, (int, np.integer)):
        return int(name_or_index)
    try:
        return dataset.class_names.index(name_or_index)
    except ValueError:
        raise ConfigurationError(f"class {name_or_index!r} not in dataset") from None


def random_other_labels(labels, class_count, rng):
    """Uniform draw from ``{0..K-1} \\ {y}`` for each label ``y``."""
    offset = rng.integers(1, class_count, size=len(labels))
    return (np.asarray(labels) + offset) % class_count


def build_adv_dataset(source, model, cfg, seed, source_id=None, profile="full"):
    """Attack every image toward a random class ``t != y`` and relabel it ``t``.

    Failed targeted attacks are kept; the success rate goes in the manifest.
    """
    cfg = _targeted(cfg)
    rng = np.random.default_rng(seed)
    targets = random_other_labels(source.labels, source.class_count, rng)
    res = attack_batch(model, source.images, targets, cfg)
    d_adv = LabeledDataset(res.adversarial, targets, source.class_count, "train", source.class_names)
    manifest = DerivedDatasetManifest(
        kind="D_adv", source_id=source_id or source.content_hash(), seed=seed,
        class_counts=d_adv.class_counts().tolist(), attack=cfg.to_dict(),
        source_index=list(range(len(source))), original_label=source.labels.tolist(),
        target_label=targets.tolist(), attack_success_rate=float(np.mean(res.success)),
        profile=profile, content_hash=d_adv.content_hash(),
    )
    return d_adv, manifest


def build_imbalanced(source, reduced_classes=REDUCED_CLASSES, fraction=0.10, seed=0,
                     source_id=None, profile="full"):
    """Keep every class in full except ``reduced_classes``, subsampled to ``fraction``."""
    if not 0 < fraction <= 1:
        raise ConfigurationError("fraction must lie in (0, 1]")
    reduced = sorted(_class_index(source, c) for c in reduced_classes)
    rng = np.random.default_rng(seed)
    keep = []
    for c in range(source.class_count):
        idx = np.flatnonzero(source.labels == c)
        if c in reduced:
            n = int(round(len(idx) * fraction))
            idx = np.sort(rng.choice(idx, size=n, replace=False))
        keep.append(idx)
    index = np.sort(np.concatenate(keep))
    d_imb = source.subset(index)
    manifest = DerivedDatasetManifest(
        kind="D_imb", source_id=source_id or source.content_hash(), seed=seed,
        class_counts=d_imb.class_counts().tolist(), reduced_classes=reduced, fraction=fraction,
        source_index=index.tolist(), original_label=d_imb.labels.tolist(),
        target_label=d_imb.labels.tolist(), profile=profile, content_hash=d_imb.content_hash(),
    )
    return d_imb, manifest


def build_augmented(d_imb, model, cfg, seed, reduced_classes=REDUCED_CLASSES, original_size=None,
                    fraction=0.10, source_id=None, profile="full"):
    """Add targeted adversarial images for each reduced class to ``d_imb``.

    Each reduced class ``c`` gains ``fraction * original_size[c]`` images drawn
    uniformly (without replacement) from the non-reduced classes of ``d_imb``
    and attacked toward ``c``. ``original_size`` defaults to the largest
    class count in ``d_imb``.
    """
    cfg = _targeted(cfg)
    reduced = sorted(_class_index(d_imb, c) for c in reduced_classes)
    counts = d_imb.class_counts()
    if original_size is None:
        original_size = {c: int(counts.max()) for c in reduced}
    elif np.isscalar(original_size):
        original_size = {c: int(original_size) for c in reduced}
    pool = np.flatnonzero(~np.isin(d_imb.labels, reduced))
    need = {c: int(round(fraction * original_size[c])) for c in reduced}
    if sum(need.values()) > len(pool):
        raise ConfigurationError(
            f"need {sum(need.values())} source images but only {len(pool)} are outside the reduced classes")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(pool, size=sum(need.values()), replace=False)
    src_index, targets, start = [], [], 0
    for c in reduced:
        picked = np.sort(chosen[start:start + need[c]])
        start += need[c]
        src_index.append(picked)
        targets.append(np.full(len(picked), c, dtype=np.int64))
    src_index = np.concatenate(src_index)
    targets = np.concatenate(targets)
    res = attack_batch(model, d_imb.images[src_index], targets, cfg)
    d_aug = LabeledDataset(np.concatenate([d_imb.images, res.adversarial]),
                           np.concatenate([d_imb.labels, targets]),
                           d_imb.class_count, "train", d_imb.class_names)
    manifest = DerivedDatasetManifest(
        kind="D_aug", source_id=source_id or d_imb.content_hash(), seed=seed,
        class_counts=d_aug.class_counts().tolist(), attack=cfg.to_dict(), reduced_classes=reduced,
        fraction=fraction, source_index=src_index.tolist(),
        original_label=d_imb.labels[src_index].tolist(), target_label=targets.tolist(),
        attack_success_rate=float(np.mean(res.success)) if len(targets) else None,
        profile=profile, content_hash=d_aug.content_hash(),
    )
    return d_aug, manifest


def rebuild(manifest, source, model=None):
    """Reconstruct a derived dataset from its manifest and source.

    ``source`` is ``D_ori`` for D_adv/D_imb and ``D_imb`` for D_aug.
    """
    m = manifest if isinstance(manifest, DerivedDatasetManifest) else DerivedDatasetManifest.from_dict(manifest)
    if m.kind == "D_imb":
        ds = source.subset(np.asarray(m.source_index, dtype=np.int64))
    else:
        if model is None:
            raise ConfigurationError(f"rebuilding {m.kind} needs the attacked model")
        cfg = AttackConfig(**m.attack)
        idx = np.asarray(m.source_index, dtype=np.int64)
        targets = np.asarray(m.target_label, dtype=np.int64)
        adv = attack_batch(model, source.images[idx], targets, cfg).adversarial
        if m.kind == "D_adv":
            ds = LabeledDataset(adv, targets, source.class_count, "train", source.class_names)
        else:
            ds = LabeledDataset(np.concatenate([source.images, adv]),
                                np.concatenate([source.labels, targets]),
                                source.class_count, "train", source.class_names)
    if m.content_hash and ds.content_hash() != m.content_hash:
        raise DataError(f"rebuilt {m.kind} does not match its manifest hash")
    return ds


def _targeted(cfg):
    if cfg.targeted:
        return cfg
    return AttackConfig(**{**cfg.to_dict(), "targeted": True})
