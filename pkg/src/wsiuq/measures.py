"""Per-sample uncertainty scores: confidence, normalised entropy, predictive variance."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigError, DomainError, ShapeError

MEASURES = ("confidence", "normed_entropy", "variance")
ROW_TOL = 1e-9


def _check_probs(p):
    p = np.asarray(p, dtype=float)
    if p.shape[-1] < 1 or p.ndim < 1:
        raise ShapeError("probability vectors need at least one class")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(np.abs(p.sum(-1) - 1) > ROW_TOL):
        raise DomainError("not a valid probability vector")
    return p


def confidence_of(probs):
    """Maximum class probability of every row of ``probs`` (shape ``(..., C)``)."""
    p = _check_probs(probs)
    return np.clip(p.max(axis=-1), 1.0 / p.shape[-1], 1.0)


def normed_entropy_of(probs):
    """Shannon entropy (nats, ``0 log 0 = 0``) divided by ``log C`` for every row."""
    p = _check_probs(probs)
    c = p.shape[-1]
    if c < 2:
        raise DomainError("normalised entropy needs at least two classes")
    # sorting makes the sum order, and so the rounding, independent of class order
    p = -np.sort(-p, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return np.clip(-terms.sum(axis=-1) / np.log(c), 0.0, 1.0)


def confidence(p):
    return float(confidence_of(np.asarray(p, dtype=float)[None])[0])


def normed_entropy(p, n_classes=None):
    p = np.asarray(p, dtype=float)
    if n_classes is not None and n_classes != p.shape[-1]:
        raise ShapeError(f"vector has {p.shape[-1]} classes, expected {n_classes}")
    return float(normed_entropy_of(p[None])[0])


def variance_of(probs):
    """Mean over classes of the population variance across draws; ``probs`` is ``(N, S, C)``."""
    p = np.asarray(probs, dtype=float)
    if p.ndim != 3:
        raise ShapeError("variance needs a (samples, draws, classes) array")
    dev = p - p.mean(axis=1, keepdims=True)
    return (dev * dev).mean(axis=1).mean(axis=1)


def variance_uncertainty(pset, index):
    return float(variance_of(pset.probs[index:index + 1])[0])


@dataclass
class UncertaintyScores:
    """Scores for every sample of a set. ``higher_is_uncertain`` is False only for confidence."""

    sample_ids: np.ndarray
    values: np.ndarray
    measure: str
    higher_is_uncertain: bool
    order_key: np.ndarray | None = None

    @property
    def uncertainty(self):
        """Scores oriented so that larger means more uncertain (order preserving).

        ``order_key`` replaces the values when rounding would blur the exact
        order, as for binary entropy (see :func:`score_set`).
        """
        if self.order_key is not None:
            return self.order_key
        return self.values if self.higher_is_uncertain else -self.values

    def to_frame(self):
        return pd.DataFrame({"sample_id": self.sample_ids, "measure": self.measure,
                             "value": self.values})

    def write_csv(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, lineterminator="\n")


def score_set(pset, measure):
    """Score a :class:`PredictionSet`.

    Confidence and entropy use the mean prediction; variance uses the spread of
    the draws and so needs more than one draw.
    """
    if measure not in MEASURES:
        raise ConfigError(f"unknown measure {measure!r}; choose from {', '.join(MEASURES)}")
    if measure == "confidence":
        return UncertaintyScores(pset.sample_ids, confidence_of(pset.mean_probs()), measure, False)
    if measure == "normed_entropy":
        mean = pset.mean_probs()
        # binary entropy is strictly decreasing in confidence, so its exact order is the
        # confidence order; float entropy would merge distinct confidences near 0.5
        key = -confidence_of(mean) if pset.n_classes == 2 else None
        return UncertaintyScores(pset.sample_ids, normed_entropy_of(mean), measure, True, key)
    if pset.n_draws < 2:
        raise ConfigError("variance needs more than one draw per sample; "
                          "use confidence or normed_entropy for single predictions")
    return UncertaintyScores(pset.sample_ids, variance_of(pset.probs), measure, True)
