"""Targeted universal perturbations and what they do to a blank gray image.

    python3 demos/uap_blank_probe.py
"""

import torch

from advbenign import TrainConfig, blank_probe, fooling_rate, train_classifier, train_uap
from advbenign.synthetic import make_shapes10

torch.set_num_threads(1)

train, test = make_shapes10(train_per_class=150, test_per_class=20, seed=0)
model = train_classifier(train, {"name": "small_cnn", "width": 8, "hidden": 32},
                         TrainConfig(epochs=10, learning_rate=3e-3, seed=0))

for target in range(10):
    uap = train_uap(model, train, target, epsilon=16 / 255, epochs=3, step_size=1 / 255, seed=target)
    pred, conf, target_conf = blank_probe(model, uap)
    print(f"target {train.class_names[target]:10s} held-out fooling {fooling_rate(model, test, uap):.3f}  "
          f"blank -> {train.class_names[pred]:10s} ({conf:.3f})")
