"""Procedural image sets used when real data is unavailable.

``make_shapes10`` is a CIFAR-shaped (32x32x3, 10 classes) stand-in that
carries the CIFAR-10 class names so the derived-set builders work unchanged.
``make_identities`` renders synthetic "faces" for the verification experiment.
"""

import numpy as np
from scipy import ndimage

from .datasets import CIFAR10_CLASSES
from .model import LabeledDataset


def _smooth_field(rng, n, side, channels, cells):
    """Low-frequency random colour fields via bicubic upsampling of a coarse grid."""
    coarse = rng.uniform(0.0, 1.0, size=(n, cells, cells, channels))
    zoom = side / cells
    return np.clip(ndimage.zoom(coarse, (1, zoom, zoom, 1), order=3), 0.0, 1.0)[:, :side, :side]


# per-class object layout: (shape kind, mean hue rgb)
_SHAPES = [
    ("disc", (0.85, 0.30, 0.25)),
    ("square", (0.25, 0.55, 0.85)),
    ("triangle", (0.30, 0.75, 0.30)),
    ("ring", (0.85, 0.75, 0.20)),
    ("hbar", (0.65, 0.30, 0.75)),
    ("vbar", (0.20, 0.75, 0.75)),
    ("cross", (0.90, 0.55, 0.20)),
    ("diamond", (0.55, 0.55, 0.55)),
    ("ellipse", (0.35, 0.35, 0.80)),
    ("corner", (0.75, 0.45, 0.55)),
]


def _mask(kind, yy, xx, cy, cx, r):
    dy, dx = yy - cy, xx - cx
    if kind == "disc":
        return dy ** 2 + dx ** 2 <= r ** 2
    if kind == "square":
        return (np.abs(dy) <= 0.8 * r) & (np.abs(dx) <= 0.8 * r)
    if kind == "triangle":
        return (dy <= 0.8 * r) & (dy >= -r) & (np.abs(dx) <= (dy + r) * 0.55)
    if kind == "ring":
        d = dy ** 2 + dx ** 2
        return (d <= r ** 2) & (d >= (0.55 * r) ** 2)
    if kind == "hbar":
        return (np.abs(dy) <= 0.35 * r) & (np.abs(dx) <= 1.2 * r)
    if kind == "vbar":
        return (np.abs(dx) <= 0.35 * r) & (np.abs(dy) <= 1.2 * r)
    if kind == "cross":
        return ((np.abs(dy) <= 0.25 * r) | (np.abs(dx) <= 0.25 * r)) & (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if kind == "diamond":
        return np.abs(dy) + np.abs(dx) <= 1.1 * r
    if kind == "ellipse":
        return (dy / (0.55 * r)) ** 2 + (dx / (1.2 * r)) ** 2 <= 1
    if kind == "corner":
        return ((np.abs(dy) <= 0.3 * r) & (dx >= -r) & (dx <= r)) | ((np.abs(dx + r) <= 0.3 * r) & (dy >= -r) & (dy <= r))
    raise ValueError(kind)


def _shapes_split(per_class, rng, split, texture, side=32):
    labels = np.repeat(np.arange(10), per_class)
    n = len(labels)
    images = 0.25 + 0.5 * _smooth_field(rng, n, side, 3, 4)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    for i, c in enumerate(labels):
        kind, hue = _SHAPES[c]
        r = rng.uniform(6.0, 10.0)
        cy, cx = rng.uniform(11.0, side - 11.0, size=2)
        colour = np.clip(np.asarray(hue) + rng.normal(0.0, 0.15, 3), 0.0, 1.0)
        m = _mask(kind, yy, xx, cy, cx, r)
        images[i][m] = 0.3 * images[i][m] + 0.7 * colour
    images += texture[labels]
    images += rng.normal(0.0, 0.03, size=images.shape)
    return LabeledDataset(np.clip(images, 0.0, 1.0).astype(np.float32), labels, 10, split, CIFAR10_CLASSES)


def make_shapes10(train_per_class=1000, test_per_class=200, texture_amplitude=0.03, seed=0):
    """Ten coloured-shape classes on smooth random backgrounds.

    Each class also carries a faint fixed high-frequency texture of
    ``texture_amplitude``: a predictive but barely visible cue.
    """
    rng = np.random.default_rng(seed)
    texture = texture_amplitude * np.sign(rng.normal(size=(10, 32, 32, 3)))
    train = _shapes_split(train_per_class, rng, "train", texture)
    test = _shapes_split(test_per_class, rng, "test", texture)
    return train, test


def make_identities(identities, per_identity, seed=0, side=32, first_label=0):
    """Synthetic identity images: one base pattern per identity plus per-image nuisance.

    Nuisances are a random shift of up to 2 pixels, brightness and contrast
    jitter, and additive Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    base = 0.15 + 0.7 * _smooth_field(rng, identities, side + 4, 3, 6)
    # a darker "eye band" and a mid-face feature keep the images face-like
    base[:, 12:16, 8:28] *= 0.6
    base[:, 22:26, 14:22] *= 0.8
    images = np.empty((identities * per_identity, side, side, 3))
    labels = np.repeat(np.arange(identities), per_identity) + first_label
    for k in range(identities * per_identity):
        ident = k // per_identity
        oy, ox = rng.integers(0, 5, size=2)
        img = base[ident, oy:oy + side, ox:ox + side]
        img = (img - 0.5) * rng.uniform(0.8, 1.2) + 0.5 + rng.uniform(-0.08, 0.08)
        images[k] = img + rng.normal(0.0, 0.03, size=img.shape)
    return np.clip(images, 0.0, 1.0).astype(np.float32), labels
