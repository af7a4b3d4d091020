"""Feed-forward classifier assembled from the layers in :mod:`.layers`."""
from __future__ import annotations

import copy

import numpy as np

from ..errors import DomainError, NumericError, ShapeError
from .layers import Dense, Dropout, ReLU, VariationalDense

PROB_FLOOR = 1e-12


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy_loss(probs, labels, floor=PROB_FLOOR):
    """Mean negative log-likelihood of ``labels`` under ``probs``."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels)
    if probs.ndim != 2 or len(probs) == 0:
        raise ShapeError("cross entropy needs a non-empty (batch, classes) array")
    if labels.shape != (len(probs),):
        raise ShapeError("labels must align with the probability batch")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise DomainError("labels must lie in [0, C)")
    p_true = probs[np.arange(len(labels)), labels]
    return float(np.mean(-np.log(np.maximum(p_true, floor))))


def elbo_loss(ce, kl_total, beta, num_batches_per_epoch):
    """Mini-batch ELBO: the KL term is spread evenly over one epoch."""
    if beta < 0:
        raise DomainError("prior weight must be non-negative")
    if num_batches_per_epoch < 1:
        raise DomainError("num_batches_per_epoch must be positive")
    return float(ce + beta * kl_total / num_batches_per_epoch)


class Network:
    """Sequential classifier with optional fixed input standardisation.

    ``mode`` is ``"eval"`` (dropout off, variational layers at their means) or
    ``"train"`` (all stochastic layers active). Monte-Carlo inference simply
    calls ``forward`` in train mode.
    """

    def __init__(self, layers, input_mean=None, input_std=None):
        self.layers = list(layers)
        dense = [l for l in self.layers if hasattr(l, "n_in")]
        if not dense:
            raise ShapeError("network needs at least one dense layer")
        for a, b in zip(dense, dense[1:]):
            if a.n_out != b.n_in:
                raise ShapeError(f"layer widths {a.n_out} -> {b.n_in} do not chain")
        self.n_features = dense[0].n_in
        self.n_classes = dense[-1].n_out
        self.input_mean = (np.zeros(self.n_features) if input_mean is None
                           else np.array(input_mean, dtype=float))
        self.input_std = (np.ones(self.n_features) if input_std is None
                          else np.array(input_std, dtype=float))
        if self.input_mean.shape != (self.n_features,) or self.input_std.shape != (self.n_features,):
            raise ShapeError("normalisation vectors must match the input width")
        if np.any(self.input_std <= 0):
            raise DomainError("input std must be positive")

    @property
    def has_dropout(self):
        return any(isinstance(l, Dropout) for l in self.layers)

    @property
    def has_variational(self):
        return any(isinstance(l, VariationalDense) for l in self.layers)

    @property
    def is_stochastic(self):
        return any(isinstance(l, Dropout) and l.p > 0 for l in self.layers) or self.has_variational

    def copy(self):
        return copy.deepcopy(self)

    def params(self):
        """Per-layer dicts of live parameter arrays (mutating them updates the net)."""
        return [layer.params() for layer in self.layers]

    def n_params(self):
        return sum(a.size for p in self.params() for a in p.values())

    def sample_noise(self, batch, rng):
        """Draw one set of per-layer noise for a batch of ``batch`` rows."""
        noise = []
        width = self.n_features
        for layer in self.layers:
            if isinstance(layer, Dropout):
                noise.append(layer.sample_noise((batch, width), rng) if layer.p > 0 else None)
            else:
                noise.append(layer.sample_noise(batch, rng))
            if hasattr(layer, "n_out"):
                width = layer.n_out
        return noise

    def _normalise(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ShapeError(f"expected (batch, {self.n_features}) input, got {x.shape}")
        return (x - self.input_mean) / self.input_std

    def logits(self, x, mode="eval", rng=None, noise=None):
        out, _ = self._forward(x, mode, rng, noise, keep=False)
        return out

    def forward(self, x, mode="eval", rng=None, noise=None):
        """Class probabilities for every row of ``x``."""
        probs = softmax(self.logits(x, mode, rng, noise))
        if not np.all(np.isfinite(probs)):
            raise NumericError("non-finite activation in forward pass")
        return probs

    def _forward(self, x, mode, rng, noise, keep):
        if mode not in ("train", "eval"):
            raise ValueError(f"unknown mode {mode!r}")
        train = mode == "train"
        if train and rng is None and noise is None and self.is_stochastic:
            raise ValueError("train mode requires an rng")
        h = self._normalise(x)
        caches = []
        for i, layer in enumerate(self.layers):
            h, cache = layer.forward(h, train, rng, None if noise is None else noise[i])
            if keep:
                caches.append(cache)
        if not np.all(np.isfinite(h)):
            raise NumericError("non-finite activation in forward pass")
        return h, caches

    def kl(self):
        return sum(l.kl() for l in self.layers if isinstance(l, VariationalDense))

    def weighted_kl(self):
        return sum(l.prior_weight * l.kl() for l in self.layers if isinstance(l, VariationalDense))

    def loss_and_grads(self, x, y, mode="train", rng=None, noise=None, num_batches=1):
        """Loss (cross entropy plus amortised KL) and its gradient for every parameter.

        Returns ``(loss, ce, grads)`` where ``grads`` mirrors :meth:`params`.
        """
        logits, caches = self._forward(x, mode, rng, noise, keep=True)
        probs = softmax(logits)
        y = np.asarray(y)
        ce = cross_entropy_loss(probs, y)
        grad = probs.copy()
        grad[np.arange(len(y)), y] -= 1.0
        grad /= len(y)
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            grad, grads[i] = self.layers[i].backward(caches[i], grad)
        loss = ce
        if self.has_variational:
            loss = elbo_loss(ce, self.weighted_kl(), 1.0, num_batches)
            for layer, g in zip(self.layers, grads):
                if isinstance(layer, VariationalDense):
                    scale = layer.prior_weight / num_batches
                    for name, kg in layer.kl_grads().items():
                        g[name] = g[name] + scale * kg
        return loss, ce, grads


def build_mlp(n_features, n_classes, rng, hidden=(64, 64), dropout=None,
              variational=False, prior_weight=1.0, init_sigma=1e-3,
              input_mean=None, input_std=None):
    """MLP ``[F, *hidden, C]`` with ReLU; dropout after every hidden block if ``dropout`` is set.

    ``dropout=None`` builds no dropout layers; any float (including 0) inserts
    them. With ``variational=True`` every dense layer is a Flipout layer.
    """
    widths = [n_features, *hidden, n_classes]
    layers = []
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        if variational:
            layers.append(VariationalDense.init(a, b, rng, prior_weight, init_sigma))
        else:
            layers.append(Dense.init(a, b, rng))
        if i < len(widths) - 2:
            layers.append(ReLU())
            if dropout is not None:
                layers.append(Dropout(dropout))
    return Network(layers, input_mean, input_std)


def zero_network(n_features, n_classes, hidden=()):
    widths = [n_features, *hidden, n_classes]
    layers = []
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        layers.append(Dense(np.zeros((b, a)), np.zeros(b)))
        if i < len(widths) - 2:
            layers.append(ReLU())
    return Network(layers)
