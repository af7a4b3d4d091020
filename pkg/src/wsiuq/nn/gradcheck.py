"""Finite-difference validation of the manual backward pass."""
from __future__ import annotations

import numpy as np


def gradient_check(network, x, y, eps=1e-4, rng=None, num_batches=1, floor=1e-7):
    """Largest relative error between analytic and central-difference gradients.

    Stochastic layers are evaluated in train mode with one noise draw frozen
    for every evaluation (drawn from ``rng``; default seed 0). Relative error
    per entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    noise = network.sample_noise(len(x), rng)
    mode = "train"

    def loss():
        return network.loss_and_grads(x, y, mode, noise=noise, num_batches=num_batches)[0]

    _, _, analytic = network.loss_and_grads(x, y, mode, noise=noise, num_batches=num_batches)
    worst = 0.0
    for params, grads in zip(network.params(), analytic):
        for name, value in params.items():
            flat = value.reshape(-1)
            g = grads[name].reshape(-1)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + eps
                up = loss()
                flat[i] = old - eps
                down = loss()
                flat[i] = old
                numeric = (up - down) / (2 * eps)
                denom = max(abs(g[i]), abs(numeric), floor)
                worst = max(worst, abs(g[i] - numeric) / denom)
    return worst


def gradient_norm(network, x, y, rng=None):
    rng = np.random.default_rng(0) if rng is None else rng
    noise = network.sample_noise(len(x), rng)
    _, _, grads = network.loss_and_grads(x, y, "train", noise=noise)
    return float(np.sqrt(sum(np.sum(g * g) for layer in grads for g in layer.values())))
