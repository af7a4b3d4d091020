"""Adam and a reduce-on-plateau learning-rate schedule."""
from __future__ import annotations

import numpy as np


class Adam:
    """Adam with bias-corrected moments, updating parameter arrays in place.

    ``params`` is the nested structure returned by ``Network.params()``; ``step``
    takes gradients in the same structure.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]
        self.v = [{k: np.zeros_like(v) for k, v in p.items()} for p in params]

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            for name, value in p.items():
                grad = g[name]
                m[name] *= self.beta1
                m[name] += (1.0 - self.beta1) * grad
                v[name] *= self.beta2
                v[name] += (1.0 - self.beta2) * grad * grad
                value -= self.lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + self.eps)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without a new best.

    "New best" means strictly lower than every earlier validation loss; the
    patience counter resets on improvement and after each reduction.
    """

    def __init__(self, lr, patience=3, factor=0.1):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, val_loss):
        """Record one epoch; returns True if the learning rate was reduced."""
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr *= self.factor
            self.bad_epochs = 0
            return True
        return False
