"""Level-graded cumulative distortions: sign-gradient steps or Gaussian noise.

Level ``k`` is ``k * steps_per_level`` one-time distortions applied in
sequence, with a clip to [0, 1] after every step. One-time step ``s`` draws
its Gaussian noise from ``default_rng([seed, s])``, so level ``k`` is level
``k - 1`` plus the next ``steps_per_level`` steps.
"""

from dataclasses import asdict, dataclass

import numpy as np

from .attacks import sign_step
from .errors import ConfigurationError
from .model import LabeledDataset, check_image


@dataclass
class DistortionSchedule:
    kind: str = "adversarial"
    levels: int = 8
    steps_per_level: int = 5
    step_size: float = 0.02
    noise_mean: float = 0.0
    # variance 0.01 (std 0.1); set 1e-4 for the std-0.01 reading
    noise_variance: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("adversarial", "gaussian"):
            raise ConfigurationError(f"unknown distortion kind {self.kind!r}")
        if self.levels < 1 or self.steps_per_level < 1:
            raise ConfigurationError("levels and steps_per_level must be >= 1")
        if self.step_size <= 0 or self.noise_variance < 0:
            raise ConfigurationError("step_size must be > 0 and noise_variance >= 0")

    @property
    def noise_std(self):
        return float(np.sqrt(self.noise_variance))

    def to_dict(self):
        return asdict(self)


def one_time_step(x, step, schedule, model=None, labels=None):
    """Apply one-time distortion number ``step`` (0-based) to ``x``."""
    if schedule.kind == "gaussian":
        rng = np.random.default_rng([schedule.seed, step])
        noise = rng.normal(schedule.noise_mean, schedule.noise_std, size=x.shape).astype(np.float32)
        return np.clip(x + noise, 0.0, 1.0)
    return sign_step(model, x, labels, schedule.step_size)


def _steps(x, start, stop, schedule, model, labels):
    for s in range(start, stop):
        x = one_time_step(x, s, schedule, model, labels)
    return x


def distort(x, model, schedule, level, label=None):
    """Image (or batch) ``x`` distorted to ``level`` (0 returns ``x`` unchanged)."""
    if not 0 <= level <= schedule.levels:
        raise ConfigurationError(f"level must lie in [0, {schedule.levels}]")
    if schedule.kind == "adversarial" and model is None:
        raise ConfigurationError("adversarial distortion needs a model")
    if schedule.kind == "adversarial" and label is None:
        raise ConfigurationError("adversarial distortion needs the true label")
    x = check_image(x)
    return _steps(x.copy(), 0, level * schedule.steps_per_level, schedule, model, label)


def build_distorted_testset(test, model, schedule, batch_size=1024):
    """``{level: LabeledDataset}`` for levels ``0..schedule.levels``; labels unchanged."""
    if len(test) == 0:
        raise ConfigurationError("test set is empty")
    if schedule.kind == "adversarial" and model is None:
        raise ConfigurationError("adversarial distortion needs a model")
    use_model = model if schedule.kind == "adversarial" else None
    out = {0: test}
    current = test.images
    per = schedule.steps_per_level
    for level in range(1, schedule.levels + 1):
        lo, hi = (level - 1) * per, level * per
        if schedule.kind == "gaussian":
            current = _steps(current, lo, hi, schedule, None, None)
        else:
            current = np.concatenate([
                _steps(current[i:i + batch_size], lo, hi, schedule, use_model, test.labels[i:i + batch_size])
                for i in range(0, len(current), batch_size)
            ])
        out[level] = LabeledDataset(current, test.labels, test.class_count, test.split, test.class_names)
    return out
