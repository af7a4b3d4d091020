"""Training-label noise: uniform flips and flips of partially covered tumor tiles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DomainError

NOISE_KINDS = ("threshold25", "threshold0", "uniform", "border")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "threshold25"
    flip_prob: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"noise kind must be one of {', '.join(NOISE_KINDS)}")
        if not 0 <= self.flip_prob <= 1:
            raise ConfigError("flip_prob must lie in [0, 1]")

    @property
    def tau(self):
        """Coverage threshold of the dataset the noise is applied to."""
        return 0.25 if self.kind == "threshold25" else 0.0


def _binary(labels):
    y = np.asarray(labels)
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("label noise needs binary labels")
    return y


def inject_uniform_noise(labels, flip_prob, rng):
    """Flip every label independently with probability ``flip_prob``."""
    y = _binary(labels)
    flip = rng.random(len(y)) < flip_prob
    return np.where(flip, 1 - y, y)


def inject_border_noise(labels, coverage, flip_prob, rng):
    """Flip tumor labels of partially covered tiles to 0 with probability ``flip_prob``."""
    y = _binary(labels)
    cov = np.asarray(coverage, dtype=float)
    if cov.shape != y.shape:
        raise DomainError("coverage must align with the labels")
    eligible = (y == 1) & (cov < 1)
    flip = eligible & (rng.random(len(y)) < flip_prob)
    return np.where(flip, 0, y)


def apply_noise(spec, labels, coverage):
    rng = np.random.default_rng([int(spec.seed), 11])
    if spec.kind == "uniform":
        return inject_uniform_noise(labels, spec.flip_prob, rng)
    if spec.kind == "border":
        return inject_border_noise(labels, coverage, spec.flip_prob, rng)
    return np.asarray(labels).copy()
