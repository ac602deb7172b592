"""Array blobs, content hashes, and JSON sidecars."""

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import DataError


def array_hash(*arrays):
    """SHA-256 over dtype, shape, and raw bytes of each array."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable))
    return path


def read_json(path):
    return json.loads(Path(path).read_text())


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def save_dataset(dataset, directory, name, manifest=None):
    """Persist a LabeledDataset as ``name.npz`` plus ``name.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savez(directory / f"{name}.npz", images=dataset.images, labels=dataset.labels)
    sidecar = {
        "class_count": dataset.class_count,
        "split": dataset.split,
        "class_names": list(dataset.class_names),
        "size": len(dataset),
        "content_hash": dataset.content_hash(),
        "manifest": manifest,
    }
    write_json(directory / f"{name}.json", sidecar)
    return directory / f"{name}.npz"


def load_dataset(path, verify=True):
    """``(dataset, manifest)`` from :func:`save_dataset` output; checks the content hash."""
    from .model import LabeledDataset

    path = Path(path)
    try:
        sidecar = read_json(path.with_suffix(".json"))
    except (OSError, ValueError) as exc:
        raise DataError(f"missing or unreadable dataset sidecar for {path}: {exc}") from exc
    try:
        with np.load(path.with_suffix(".npz")) as blob:
            images, labels = blob["images"], blob["labels"]
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"unreadable dataset blob {path}: {exc}") from exc
    ds = LabeledDataset(images, labels, sidecar["class_count"], sidecar["split"],
                        tuple(sidecar.get("class_names", ())))
    if verify and ds.content_hash() != sidecar["content_hash"]:
        raise DataError(f"content hash mismatch for {path}")
    return ds, sidecar.get("manifest")
