import numpy as np
import pytest
import torch

from advbenign.model import Classifier, LabeledDataset, build_network

torch.set_num_threads(1)

# lines printed by the acceptance module, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def linear_classifier(shape=(4, 4, 1), classes=2, seed=0, scale=1.0):
    """Linear softmax classifier with fixed random weights."""
    arch = {"name": "linear", "input_shape": list(shape), "class_count": classes}
    net = build_network(arch)
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        net[1].weight.copy_(torch.from_numpy(scale * rng.normal(size=net[1].weight.shape).astype(np.float32)))
        net[1].bias.copy_(torch.from_numpy(0.1 * rng.normal(size=net[1].bias.shape).astype(np.float32)))
    return Classifier(arch, net)


@pytest.fixture
def toy_linear():
    return linear_classifier()


@pytest.fixture
def small_cnn():
    arch = {"name": "small_cnn", "input_shape": [8, 8, 3], "class_count": 4, "width": 4, "hidden": 8}
    torch.manual_seed(0)
    net = build_network(arch)
    return Classifier(arch, net)


def blob_dataset(n_per_class=20, classes=4, shape=(8, 8, 3), seed=0, names=None):
    """Classes separated by mean brightness; easy to learn in one epoch."""
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(classes), n_per_class)
    base = (labels + 0.5) / classes
    images = np.clip(base[:, None, None, None] + rng.normal(0, 0.05, size=(len(labels), *shape)), 0, 1)
    return LabeledDataset(images.astype(np.float32), labels, classes, "train", names)


def tiny_config(name, seeds=(0, 1)):
    """Default config for ``name`` shrunk to seconds of runtime."""
    import dataclasses

    from advbenign.config import default_config

    cfg = default_config(name)
    cfg.train = dataclasses.replace(cfg.train, epochs=1)
    source = "shapes10" if cfg.dataset.source == "auto" else cfg.dataset.source
    cfg.dataset = dataclasses.replace(cfg.dataset, source=source, train_per_class=12, test_per_class=4,
                                      identities=20, images_per_identity=4)
    cfg.model = dataclasses.replace(cfg.model, width=4, hidden=16, embedding_dim=8)
    cfg.experiment = dataclasses.replace(cfg.experiment, uap_epochs=1, seeds=list(seeds))
    cfg.attack = dataclasses.replace(cfg.attack, iterations=2) if cfg.attack.method != "FGSM" else cfg.attack
    return cfg
