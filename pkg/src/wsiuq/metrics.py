"""Selective classification and calibration metrics.

Rejection always removes the most uncertain samples first; ties are broken by
original sample index (the lower index is rejected first).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .errors import ConfigError, DomainError, ShapeError

METRICS = ("accuracy", "balanced_accuracy")


def _pair(pred, true):
    pred = np.asarray(pred)
    true = np.asarray(true)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ShapeError("predictions and labels must be aligned 1-D arrays")
    if len(true) == 0:
        raise DomainError("metric of an empty set is undefined")
    return pred, true


def accuracy(pred, true):
    pred, true = _pair(pred, true)
    return float(np.mean(pred == true))


def balanced_accuracy(pred, true):
    """Unweighted mean recall over the classes present in ``true``."""
    pred, true = _pair(pred, true)
    classes = np.unique(true)
    return float(np.mean([np.mean(pred[true == c] == c) for c in classes]))


def auroc(positive_scores, negative_scores):
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    pos = np.asarray(positive_scores, dtype=float).ravel()
    neg = np.asarray(negative_scores, dtype=float).ravel()
    if len(pos) == 0 or len(neg) == 0:
        raise DomainError("AUROC needs at least one positive and one negative")
    ranks = rankdata(np.concatenate([pos, neg]))
    u = ranks[: len(pos)].sum() - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def auroc_from_labels(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    return auroc(scores[labels == 1], scores[labels != 1])


@dataclass
class CalibrationBins:
    """Equal-width confidence bins; bin ``m`` covers ``(m/M, (m+1)/M]`` and bin 0 includes 0."""

    counts: np.ndarray
    mean_confidence: np.ndarray
    mean_accuracy: np.ndarray

    @property
    def n_bins(self):
        return len(self.counts)

    @property
    def n(self):
        return int(self.counts.sum())

    @property
    def edges(self):
        return np.arange(self.n_bins + 1) / self.n_bins

    def to_frame(self):
        e = self.edges
        return pd.DataFrame({"bin_lo": e[:-1], "bin_hi": e[1:], "count": self.counts,
                             "mean_conf": self.mean_confidence, "mean_acc": self.mean_accuracy})


def bin_index(confidences, n_bins):
    edges = np.arange(n_bins + 1) / n_bins
    return np.clip(np.searchsorted(edges, confidences, side="left") - 1, 0, n_bins - 1)


def ece(confidences, correct, n_bins=10):
    """Expected calibration error and its bins; empty bins contribute nothing."""
    conf = np.asarray(confidences, dtype=float)
    hit = np.asarray(correct, dtype=float)
    if conf.shape != hit.shape or conf.ndim != 1:
        raise ShapeError("confidences and correctness flags must be aligned 1-D arrays")
    if len(conf) == 0:
        raise DomainError("ECE of an empty set is undefined")
    if n_bins < 1:
        raise ConfigError("n_bins must be at least 1")
    if np.any(~np.isfinite(conf)) or np.any((conf < 0) | (conf > 1)):
        raise DomainError("confidences must lie in [0, 1]")
    idx = bin_index(conf, n_bins)
    counts = np.bincount(idx, minlength=n_bins)
    sum_conf = np.bincount(idx, weights=conf, minlength=n_bins)
    sum_acc = np.bincount(idx, weights=hit, minlength=n_bins)
    safe = np.maximum(counts, 1)
    mean_conf = np.where(counts > 0, sum_conf / safe, 0.0)
    mean_acc = np.where(counts > 0, sum_acc / safe, 0.0)
    value = float(np.sum(counts / len(conf) * np.abs(mean_acc - mean_conf)))
    return value, CalibrationBins(counts, mean_conf, mean_acc)


@dataclass
class RejectCurve:
    reject_fractions: np.ndarray
    values: np.ndarray
    metric: str
    order: np.ndarray

    @property
    def auarc(self):
        return auarc(self)

    def value_at(self, fraction):
        """Metric after rejecting ``floor(fraction * n)`` samples."""
        k = int(np.floor(fraction * len(self.values) + 1e-9))
        return float(self.values[min(k, len(self.values) - 1)])

    def to_frame(self):
        return pd.DataFrame({"reject_fraction": self.reject_fractions, "metric_value": self.values})


def rejection_order(uncertainty):
    """Indices from most to least uncertain, ties by ascending index."""
    u = np.asarray(uncertainty, dtype=float)
    if np.any(np.isnan(u)):
        raise DomainError("uncertainty scores must not be NaN")
    return np.lexsort((np.arange(len(u)), -u))


def accuracy_reject_curve(uncertainty, pred, true, metric="accuracy"):
    """Metric of the retained samples after rejecting ``k = 0..n-1`` most uncertain ones."""
    pred, true = _pair(pred, true)
    if np.shape(uncertainty) != true.shape:
        raise ShapeError("uncertainty must align with the labels")
    if metric not in METRICS:
        raise ConfigError(f"unknown curve metric {metric!r}")
    n = len(true)
    order = rejection_order(uncertainty)
    hit = (pred == true)[order]
    if metric == "accuracy":
        kept_hits = np.cumsum(hit[::-1])[::-1]
        values = kept_hits / np.arange(n, 0, -1)
    else:
        classes, cls = np.unique(true[order], return_inverse=True)
        onehot = np.zeros((n, len(classes)))
        onehot[np.arange(n), cls] = 1.0
        kept = np.cumsum(onehot[::-1], axis=0)[::-1]
        kept_hits = np.cumsum((onehot * hit[:, None])[::-1], axis=0)[::-1]
        present = kept > 0
        recall = np.divide(kept_hits, kept, out=np.zeros_like(kept), where=present)
        values = recall.sum(axis=1) / present.sum(axis=1)
    return RejectCurve(np.arange(n) / n, values, metric, order)


def auarc(curve):
    """Mean metric over all rejection counts (left Riemann sum on the ``k/n`` grid)."""
    return float(np.mean(curve.values))


def median_iqr(values):
    """Median and type-7 interquartile range."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise DomainError("median of an empty set is undefined")
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75], method="linear")
    return float(med), float(q3 - q1)


def summarize(values):
    """Mean, sample std, median, IQR and count of a list of values."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {"n": 0, "mean": None, "std": None, "median": None, "iqr": None}
    med, iqr = median_iqr(v)
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return {"n": int(v.size), "mean": float(v.mean()), "std": std, "median": med, "iqr": iqr}


@dataclass
class SliceResult:
    slide_id: str
    balanced_accuracy: float
    ece: float
    auarc: float


def per_slide_results(pset, uncertainty, n_bins=10):
    """Balanced accuracy, ECE and balanced-accuracy AUARC for every slide of ``pset``."""
    if pset.labels is None or pset.slide_ids is None:
        raise ConfigError("per-slide metrics need labels and slide ids")
    uncertainty = np.asarray(uncertainty, dtype=float)
    mean = pset.mean_probs()
    pred = mean.argmax(axis=1)
    conf = mean.max(axis=1)
    out = []
    for slide in sorted(set(pset.slide_ids.tolist())):
        m = pset.slide_ids == slide
        curve = accuracy_reject_curve(uncertainty[m], pred[m], pset.labels[m], "balanced_accuracy")
        out.append(SliceResult(str(slide), balanced_accuracy(pred[m], pset.labels[m]),
                               ece(conf[m], pred[m] == pset.labels[m], n_bins)[0], curve.auarc))
    return out


def per_slide_median(results, field="balanced_accuracy"):
    """Median and IQR of one metric over slides; accepts SliceResults or plain numbers."""
    values = [getattr(r, field) if isinstance(r, SliceResult) else r for r in results]
    return median_iqr(values)


@dataclass
class RankTable:
    """``ranks[split][method]`` with 1 = best; ties go to the earlier method in ``methods``."""

    metric: str
    higher_is_better: bool
    methods: list
    ranks: dict

    def to_dict(self):
        return {"metric": self.metric, "higher_is_better": self.higher_is_better,
                "tie_break": "configured method order", "methods": list(self.methods),
                "ranks": {s: dict(r) for s, r in self.ranks.items()}}


def rank_methods(scores, higher_is_better=True, methods=None, metric="metric"):
    """Rank methods within every split of ``scores[split][method]``."""
    if not scores:
        raise DomainError("no splits to rank")
    methods = list(methods) if methods is not None else list(next(iter(scores.values())))
    ranks = {}
    for split, row in scores.items():
        missing = [m for m in methods if m not in row or row[m] is None]
        if missing:
            raise DomainError(f"split {split!r} has no score for {', '.join(missing)}")
        vals = np.array([row[m] for m in methods], dtype=float)
        key = -vals if higher_is_better else vals
        order = np.lexsort((np.arange(len(methods)), key))
        ranks[split] = {methods[i]: int(r) + 1 for r, i in enumerate(order)}
    return RankTable(metric, higher_is_better, methods, ranks)


def top_bottom_k(uncertainty, k, labels=None):
    """Indices of the ``k`` most certain and ``k`` most uncertain samples.

    Returns ``(certain, uncertain)`` as lists of ``(index, uncertainty, label)``.
    The uncertain list is the exact reverse of the full certainty ordering.
    """
    u = np.asarray(uncertainty, dtype=float)
    if not 0 <= k <= len(u):
        raise DomainError("k must lie in [0, n]")
    ascending = rejection_order(u)[::-1]
    lab = [None] * len(u) if labels is None else list(np.asarray(labels).tolist())
    entry = lambda i: (int(i), float(u[i]), lab[i])
    return [entry(i) for i in ascending[:k]], [entry(i) for i in ascending[::-1][:k]]


def write_json(obj, path):
    """Deterministic JSON: sorted keys, fixed indent, trailing newline."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_frame(frame, path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
