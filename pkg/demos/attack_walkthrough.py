"""Train a small classifier on the procedural shapes set and compare the five sign attacks.

    python3 demos/attack_walkthrough.py
"""

import numpy as np
import torch

from advbenign import METHODS, AttackConfig, TrainConfig, accuracy, attack_batch, train_classifier
from advbenign.synthetic import make_shapes10

torch.set_num_threads(1)

train, test = make_shapes10(train_per_class=150, test_per_class=20, seed=0)
model = train_classifier(train, {"name": "small_cnn", "width": 8, "hidden": 32},
                         TrainConfig(epochs=10, learning_rate=3e-3, seed=0))
print(f"clean test accuracy {accuracy(model, test):.3f}")

for eps in (0.0, 2 / 255, 8 / 255):
    for method in METHODS:
        cfg = AttackConfig.for_method(method, epsilon=eps, seed=1)
        res = attack_batch(model, test.images, test.labels, cfg)
        acc = np.mean(model.predict(res.adversarial) == test.labels)
        linf = np.abs(res.adversarial - test.images).max()
        print(f"eps={eps * 255:4.1f}/255 {method:11s} accuracy {acc:.3f}  max|x'-x| {linf * 255:.2f}/255")
