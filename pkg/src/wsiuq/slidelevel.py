"""Slide-level analysis: confidence maps, top-q tile aggregation and gated-attention MIL."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, DomainError, NumericDivergenceError, ShapeError
from .measures import confidence_of
from .nn.network import softmax
from .nn.optim import Adam
from .predictions import PredictionSet

SENTINEL = -1.0


@dataclass
class ConfidenceMap:
    """Tumor probability per grid cell, ``values[y, x]``; cells without a tile hold ``SENTINEL``."""

    slide_id: str
    values: np.ndarray

    @property
    def mask(self):
        return self.values != SENTINEL

    def to_pgm(self):
        """8-bit plain PGM of the map (sentinel cells are 0) and of the validity mask."""
        h, w = self.values.shape
        grey = np.where(self.mask, np.rint(np.clip(self.values, 0, 1) * 255), 0).astype(int)
        mask = np.where(self.mask, 255, 0)
        fmt = lambda a: f"P2\n{w} {h}\n255\n" + "\n".join(" ".join(map(str, r)) for r in a) + "\n"
        return fmt(grey), fmt(mask)

    def to_csv(self):
        return "\n".join(",".join(repr(float(v)) for v in row) for row in self.values) + "\n"

    def write(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        grey, mask = self.to_pgm()
        paths = [directory / f"{self.slide_id}.pgm", directory / f"{self.slide_id}.mask.pgm",
                 directory / f"{self.slide_id}.csv"]
        for path, text in zip(paths, (grey, mask, self.to_csv())):
            path.write_text(text)
        return paths


def stitch_confidence_map(xs, ys, tumor_probs, width, height, slide_id="slide"):
    xs = np.asarray(xs, dtype=int)
    ys = np.asarray(ys, dtype=int)
    p = np.asarray(tumor_probs, dtype=float)
    if not xs.shape == ys.shape == p.shape:
        raise ShapeError("coordinates and probabilities must align")
    if np.any((xs < 0) | (xs >= width) | (ys < 0) | (ys >= height)):
        raise DomainError("tile coordinates lie outside the slide grid")
    flat = ys * width + xs
    if len(np.unique(flat)) != len(flat):
        raise DataError(f"duplicate tile coordinates on slide {slide_id}")
    values = np.full(width * height, SENTINEL)
    values[flat] = p
    return ConfidenceMap(slide_id, values.reshape(height, width))


@dataclass
class SlidePrediction:
    slide_id: str
    probs: np.ndarray
    uncertainty: float
    method_tag: str = "top_q"


def aggregate_top_q(pset, q=0.01, slide_id=None):
    """Average the mean predictions of the ``ceil(q * n)`` most confident tiles."""
    if not 0 < q <= 1:
        raise DomainError("q must lie in (0, 1]")
    if pset.n_samples == 0:
        raise DomainError("cannot aggregate an empty slide")
    mean = pset.mean_probs()
    k = max(1, math.ceil(q * len(mean) - 1e-9))
    conf = confidence_of(mean)
    top = np.lexsort((np.arange(len(conf)), -conf))[:k]
    probs = mean[top].mean(axis=0)
    if slide_id is None:
        slide_id = str(pset.slide_ids[0]) if pset.slide_ids is not None else "slide"
    return SlidePrediction(slide_id, probs, float(1.0 - probs.max()), pset.method_tag)


def slide_predictions_to_set(preds, labels=None, method_tag="top_q"):
    """Stack one-draw slide predictions into a PredictionSet keyed by slide index."""
    probs = np.stack([p.probs for p in preds])[:, None, :]
    ids = np.array([p.slide_id for p in preds])
    return PredictionSet(np.arange(len(preds)), probs, method_tag, slide_ids=ids,
                         labels=None if labels is None else np.asarray(labels))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class AttentionMILHead:
    """Instance embedding, gated attention pooling and a linear slide classifier.

    ``h_k = dropout(relu(W x_k + b))``; ``a = softmax_k(w . (tanh(V h_k) * sigmoid(U h_k)))``;
    ``p = softmax(C (sum_k a_k h_k) + c)``.
    """

    def __init__(self, n_features, n_classes=2, embed=32, hidden=32, dropout=0.25, rng=None,
                 input_mean=None, input_std=None):
        if not 0 <= dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        rng = np.random.default_rng(0) if rng is None else rng
        he = lambda o, i: rng.standard_normal((o, i)) * np.sqrt(2.0 / i)
        glorot = lambda o, i: rng.standard_normal((o, i)) * np.sqrt(1.0 / i)
        self.p = {
            "W": he(embed, n_features), "b": np.zeros(embed),
            "V": glorot(hidden, embed), "U": glorot(hidden, embed), "w": glorot(1, hidden)[0],
            "C": glorot(n_classes, embed), "c": np.zeros(n_classes),
        }
        self.dropout = float(dropout)
        self.n_features = n_features
        self.n_classes = n_classes
        self.input_mean = np.zeros(n_features) if input_mean is None else np.asarray(input_mean, float)
        self.input_std = np.ones(n_features) if input_std is None else np.asarray(input_std, float)

    def params(self):
        return [self.p]

    def copy(self):
        other = AttentionMILHead.__new__(AttentionMILHead)
        other.__dict__ = {k: v for k, v in self.__dict__.items()}
        other.p = {k: v.copy() for k, v in self.p.items()}
        return other

    def sample_mask(self, n_instances, rng):
        keep = rng.random((n_instances, len(self.p["b"]))) >= self.dropout
        return keep / (1.0 - self.dropout)

    def _forward(self, bag, mask):
        x = np.asarray(bag, dtype=float)
        if x.ndim != 2 or len(x) == 0:
            raise ShapeError("a bag must be a non-empty (instances, features) array")
        if x.shape[1] != self.n_features:
            raise ShapeError(f"instances must have {self.n_features} features")
        x = (x - self.input_mean) / self.input_std
        p = self.p
        pre = x @ p["W"].T + p["b"]
        h = np.maximum(pre, 0.0)
        if mask is not None:
            h = h * mask
        A = np.tanh(h @ p["V"].T)
        G = _sigmoid(h @ p["U"].T)
        s = (A * G) @ p["w"]
        a = softmax(s)
        z = a @ h
        probs = softmax(p["C"] @ z + p["c"])
        return probs, a, (x, pre, h, A, G, a, z, mask)

    def forward(self, bag, mode="eval", rng=None, mask=None):
        """Slide probabilities and attention weights for one bag."""
        if mode not in ("train", "eval"):
            raise ConfigError("mode must be 'train' or 'eval'")
        if mode == "train" and mask is None:
            if rng is None:
                raise ConfigError("train mode requires an rng")
            mask = self.sample_mask(len(bag), rng) if self.dropout > 0 else None
        elif mode == "eval":
            mask = None
        probs, a, _ = self._forward(bag, mask)
        if not np.all(np.isfinite(probs)):
            raise NumericDivergenceError("non-finite MIL output")
        return probs, a

    def loss_and_grads(self, bag, label, mask=None):
        probs, _, (x, pre, h, A, G, a, z, mask) = self._forward(bag, mask)
        p = self.p
        loss = -np.log(max(probs[label], 1e-12))
        dlogit = probs.copy()
        dlogit[label] -= 1.0
        g = {"C": np.outer(dlogit, z), "c": dlogit}
        dz = p["C"].T @ dlogit
        dh = np.outer(a, dz)
        da = h @ dz
        ds = a * (da - a @ da)
        g["w"] = (A * G).T @ ds
        dAG = np.outer(ds, p["w"])
        dA = dAG * G * (1.0 - A * A)
        dG = dAG * A * G * (1.0 - G)
        g["V"] = dA.T @ h
        g["U"] = dG.T @ h
        dh = dh + dA @ p["V"] + dG @ p["U"]
        if mask is not None:
            dh = dh * mask
        dpre = dh * (pre > 0)
        g["W"] = dpre.T @ x
        g["b"] = dpre.sum(axis=0)
        return float(loss), [g]


def mil_gradient_check(head, bag, label, eps=1e-5, mask=None, floor=1e-7):
    _, (analytic,) = head.loss_and_grads(bag, label, mask)
    worst = 0.0
    for name, value in head.p.items():
        flat = value.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = head.loss_and_grads(bag, label, mask)[0]
            flat[i] = old - eps
            down = head.loss_and_grads(bag, label, mask)[0]
            flat[i] = old
            num = (up - down) / (2 * eps)
            worst = max(worst, abs(num - grad[i]) / max(abs(num), abs(grad[i]), floor))
    return worst


@dataclass(frozen=True)
class MILConfig:
    learning_rate: float = 2e-4
    min_epochs: int = 50
    max_epochs: int = 200
    patience: int = 20
    dropout: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 1 <= self.min_epochs <= self.max_epochs:
            raise ConfigError("need 1 <= min_epochs <= max_epochs")
        if self.patience < 1:
            raise ConfigError("patience must be positive")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown MIL keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class MILResult:
    head: AttentionMILHead
    val_losses: list
    stopped_epoch: int
    best_epoch: int


def bag_loss(head, bags, labels):
    return float(np.mean([-np.log(max(head.forward(b)[0][y], 1e-12))
                          for b, y in zip(bags, labels)]))


def bag_accuracy(head, bags, labels):
    return float(np.mean([head.forward(b)[0].argmax() == y for b, y in zip(bags, labels)]))


def train_mil(head, train_bags, train_labels, val_bags, val_labels, config=None):
    """Adam on one bag per step with class-balanced bag sampling.

    Each epoch draws ``len(train_bags)`` bags (uniform class, then uniform bag).
    Training stops once ``min_epochs`` have run and the validation loss has
    not improved for ``patience`` epochs, or at ``max_epochs``; the parameters
    with the lowest validation loss are restored.
    """
    config = config or MILConfig()
    y = np.asarray(train_labels, dtype=int)
    yv = np.asarray(val_labels, dtype=int)
    if len(np.unique(y)) < 2:
        raise DomainError("MIL training needs both slide classes in the training set")
    if len(np.unique(yv)) < 2:
        raise DomainError("MIL training needs both slide classes in the validation set")
    rng = np.random.default_rng([int(config.seed), 5])
    optimizer = Adam(head.params(), lr=config.learning_rate)
    by_class = [np.flatnonzero(y == c) for c in np.unique(y)]
    best, best_epoch, best_params, stale = np.inf, 0, None, 0
    losses = []
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        for _ in range(len(y)):
            members = by_class[rng.integers(len(by_class))]
            i = members[rng.integers(len(members))]
            mask = head.sample_mask(len(train_bags[i]), rng) if head.dropout > 0 else None
            loss, grads = head.loss_and_grads(train_bags[i], y[i], mask)
            if not np.isfinite(loss):
                raise NumericDivergenceError(f"MIL loss diverged in epoch {epoch}")
            optimizer.step(grads)
        val = bag_loss(head, val_bags, yv)
        losses.append(val)
        if val < best:
            best, best_epoch, stale = val, epoch, 0
            best_params = {k: v.copy() for k, v in head.p.items()}
        else:
            stale += 1
        if epoch >= config.min_epochs and stale >= config.patience:
            break
    for k in head.p:
        head.p[k][...] = best_params[k]
    return MILResult(head, losses, epoch, best_epoch)


def slide_methods(heads, bags, kind="ensemble", n_samples=10, rng=None, slide_ids=None,
                  labels=None):
    """Slide-level PredictionSet: one draw per ensemble head, or MC-dropout passes of one head."""
    if kind == "ensemble":
        probs = np.stack([[h.forward(b)[0] for h in heads] for b in bags])
    elif kind == "mcdo":
        if rng is None:
            raise ConfigError("MC dropout needs an rng")
        head = heads[0] if isinstance(heads, (list, tuple)) else heads
        probs = np.stack([[head.forward(b, "train", rng)[0] for _ in range(n_samples)]
                          for b in bags])
    else:
        raise ConfigError(f"unknown slide method {kind!r}")
    ids = np.arange(len(bags))
    return PredictionSet(ids, probs, f"mil_{kind}",
                         slide_ids=None if slide_ids is None else np.asarray(slide_ids),
                         labels=None if labels is None else np.asarray(labels))
