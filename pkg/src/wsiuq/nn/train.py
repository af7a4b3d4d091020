"""Mini-batch Adam training with plateau LR decay and best-accuracy model selection."""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from ..errors import ConfigError, NumericDivergenceError, NumericError, ShapeError
from ..sim.sampling import balanced_batches, n_batches, shuffled_batches
from .network import cross_entropy_loss
from .optim import Adam, PlateauScheduler


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    plateau_patience: int = 3
    plateau_factor: float = 0.1
    max_epochs: int = 100
    seed: int = 0
    class_balanced: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.plateau_patience < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, plateau_patience and max_epochs must be positive")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError("plateau_factor must lie in (0, 1)")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    learning_rate: float


@dataclass
class TrainResult:
    network: object
    history: list = field(default_factory=list)
    best_epoch: int = 0


def evaluate(network, x, y):
    """Deterministic (eval-mode) cross entropy and accuracy."""
    probs = network.forward(x, "eval")
    return cross_entropy_loss(probs, y), float(np.mean(probs.argmax(axis=1) == y))


def _snapshot(network):
    return [{k: v.copy() for k, v in p.items()} for p in network.params()]


def _restore(network, snapshot):
    for live, saved in zip(network.params(), snapshot):
        for k in live:
            live[k][...] = saved[k]


def train(network, train_set, val_set, config, augment=None):
    """Train ``network`` in place and return it with the per-epoch history.

    ``train_set`` and ``val_set`` are ``(features, labels)`` pairs. ``augment``
    is an optional ``f(x, rng) -> x`` applied to every training batch. After
    the last epoch the parameters of the epoch with the highest validation
    accuracy (earliest on ties) are restored.
    """
    x_tr, y_tr = (np.asarray(a) for a in train_set)
    x_va, y_va = (np.asarray(a) for a in val_set)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ShapeError("train and validation sets must be non-empty")
    for x in (x_tr, x_va):
        if x.ndim != 2 or x.shape[1] != network.n_features:
            raise ShapeError(f"feature width must be {network.n_features}")
    y_tr = y_tr.astype(int)
    y_va = y_va.astype(int)

    rng = np.random.default_rng(int(config.seed))
    optimizer = Adam(network.params(), lr=config.learning_rate)
    scheduler = PlateauScheduler(config.learning_rate, config.plateau_patience,
                                 config.plateau_factor)
    nb = n_batches(len(y_tr), config.batch_size)
    history = []
    best_acc, best_epoch, best_params = -1.0, 0, None

    for epoch in range(1, config.max_epochs + 1):
        optimizer.lr = scheduler.lr
        if config.class_balanced:
            batches = balanced_batches(y_tr, config.batch_size, rng, nb)
        else:
            batches = shuffled_batches(len(y_tr), config.batch_size, rng)
        total = 0.0
        for idx in batches:
            xb = x_tr[idx]
            if augment is not None:
                xb = augment(xb, rng)
            try:
                loss, _, grads = network.loss_and_grads(xb, y_tr[idx], "train", rng,
                                                        num_batches=nb)
            except NumericError as exc:
                raise NumericDivergenceError(f"non-finite forward pass in epoch {epoch}") from exc
            if not np.isfinite(loss):
                raise NumericDivergenceError(f"loss diverged in epoch {epoch}")
            optimizer.step(grads)
            total += loss
        val_loss, val_acc = evaluate(network, x_va, y_va)
        if not np.isfinite(val_loss):
            raise NumericDivergenceError(f"validation loss diverged in epoch {epoch}")
        history.append(EpochRecord(epoch, total / nb, val_loss, val_acc, scheduler.lr))
        if val_acc > best_acc:
            best_acc, best_epoch, best_params = val_acc, epoch, _snapshot(network)
        scheduler.step(val_loss)

    _restore(network, best_params)
    return TrainResult(network, history, best_epoch)
