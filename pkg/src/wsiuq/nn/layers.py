"""Dense, dropout, ReLU and Flipout variational layers with manual backprop.

Every layer follows the same protocol::

    out, cache = layer.forward(x, train, rng, noise)
    grad_in, grads = layer.backward(cache, grad_out)

``noise`` lets a caller freeze the stochastic part of a layer (dropout mask,
Flipout perturbation) so the same draw can be replayed, which is what the
gradient checker relies on. Layers never store activations on ``self``, so a
trained network can be shared between threads for inference.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..errors import DomainError, ShapeError


def softplus(x):
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def _check_input(x, n_in):
    if x.ndim != 2 or x.shape[1] != n_in:
        raise ShapeError(f"expected input of shape (batch, {n_in}), got {x.shape}")


class Dense:
    """Fully connected layer computing ``x @ weights.T + bias``."""

    kind = "dense"

    def __init__(self, weights, bias):
        weights = np.array(weights, dtype=float)
        bias = np.array(bias, dtype=float)
        if weights.ndim != 2 or bias.shape != (weights.shape[0],):
            raise ShapeError(f"weights {weights.shape} and bias {bias.shape} disagree")
        if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
            raise DomainError("dense parameters must be finite")
        self.weights = weights
        self.bias = bias

    @classmethod
    def init(cls, n_in, n_out, rng):
        # He initialisation for ReLU stacks
        w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
        return cls(w, np.zeros(n_out))

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]

    def params(self):
        return {"weights": self.weights, "bias": self.bias}

    def sample_noise(self, batch, rng):
        return None

    def forward(self, x, train=False, rng=None, noise=None):
        _check_input(x, self.n_in)
        return x @ self.weights.T + self.bias, x

    def backward(self, cache, grad):
        x = cache
        grads = {"weights": grad.T @ x, "bias": grad.sum(axis=0)}
        return grad @ self.weights, grads

    def kl(self):
        return 0.0

    def kl_grads(self):
        return {}


class ReLU:
    kind = "relu"

    def params(self):
        return {}

    def sample_noise(self, batch, rng):
        return None

    def forward(self, x, train=False, rng=None, noise=None):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, cache, grad):
        return np.where(cache, grad, 0.0), {}

    def kl(self):
        return 0.0

    def kl_grads(self):
        return {}


@dataclass(frozen=True)
class DropoutSpec:
    p: float = 0.3

    def __post_init__(self):
        if not 0.0 <= self.p < 1.0:
            raise DomainError(f"dropout probability must lie in [0, 1), got {self.p}")


class Dropout:
    """Inverted dropout: survivors are scaled by ``1 / (1 - p)`` at train time."""

    kind = "dropout"

    def __init__(self, p=0.3):
        self.spec = DropoutSpec(float(p))

    @property
    def p(self):
        return self.spec.p

    def params(self):
        return {}

    def sample_noise(self, shape, rng):
        keep = rng.random(shape) >= self.p
        return keep / (1.0 - self.p)

    def forward(self, x, train=False, rng=None, noise=None):
        if not train or self.p == 0.0:
            return x, None
        if noise is None:
            if rng is None:
                raise ValueError("train-mode dropout needs an rng")
            noise = self.sample_noise(x.shape, rng)
        return x * noise, noise

    def backward(self, cache, grad):
        if cache is None:
            return grad, {}
        return grad * cache, {}

    def kl(self):
        return 0.0

    def kl_grads(self):
        return {}


def dropout_forward(spec, x, mode, rng=None):
    """Apply inverted dropout in ``mode`` ``"train"``; identity in ``"eval"``."""
    out, _ = Dropout(spec.p).forward(np.asarray(x, dtype=float), mode == "train", rng)
    return out


def kl_gaussian_to_standard_normal(mu, sigma):
    """KL( N(mu, sigma^2) || N(0, 1) ) summed over all entries."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise DomainError("sigma must be strictly positive")
    var = sigma * sigma
    return float(0.5 * np.sum(var + mu * mu - 1.0 - np.log(var)))


@dataclass
class FlipoutNoise:
    """One frozen draw for a Flipout layer."""

    weight_eps: np.ndarray  # (out, in), shared across the batch
    bias_eps: np.ndarray  # (out,)
    sign_in: np.ndarray  # (batch, in) of +-1
    sign_out: np.ndarray  # (batch, out) of +-1


class VariationalDense:
    """Mean-field Gaussian dense layer sampled with the Flipout estimator.

    Posterior scale is parameterised as ``sigma = softplus(rho)``. In eval mode
    the layer uses the posterior means only.
    """

    kind = "variational"

    def __init__(self, weight_mean, weight_rho, bias_mean, bias_rho, prior_weight=1.0):
        self.weight_mean = np.array(weight_mean, dtype=float)
        self.weight_rho = np.array(weight_rho, dtype=float)
        self.bias_mean = np.array(bias_mean, dtype=float)
        self.bias_rho = np.array(bias_rho, dtype=float)
        if self.weight_mean.ndim != 2 or self.weight_rho.shape != self.weight_mean.shape:
            raise ShapeError("weight mean and rho must be matrices of equal shape")
        n_out = self.weight_mean.shape[0]
        if self.bias_mean.shape != (n_out,) or self.bias_rho.shape != (n_out,):
            raise ShapeError("bias mean and rho must be vectors of length n_out")
        if prior_weight < 0:
            raise DomainError("prior weight must be non-negative")
        self.prior_weight = float(prior_weight)

    @classmethod
    def init(cls, n_in, n_out, rng, prior_weight=1.0, init_sigma=1e-3):
        mu = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
        rho = float(inverse_softplus(init_sigma))
        return cls(mu, np.full((n_out, n_in), rho), np.zeros(n_out),
                   np.full(n_out, rho), prior_weight)

    @property
    def n_in(self):
        return self.weight_mean.shape[1]

    @property
    def n_out(self):
        return self.weight_mean.shape[0]

    @property
    def weight_sigma(self):
        return softplus(self.weight_rho)

    @property
    def bias_sigma(self):
        return softplus(self.bias_rho)

    def params(self):
        return {
            "weight_mean": self.weight_mean,
            "weight_rho": self.weight_rho,
            "bias_mean": self.bias_mean,
            "bias_rho": self.bias_rho,
        }

    def sample_noise(self, batch, rng):
        return FlipoutNoise(
            weight_eps=rng.standard_normal((self.n_out, self.n_in)),
            bias_eps=rng.standard_normal(self.n_out),
            sign_in=rng.integers(0, 2, size=(batch, self.n_in)) * 2.0 - 1.0,
            sign_out=rng.integers(0, 2, size=(batch, self.n_out)) * 2.0 - 1.0,
        )

    def forward(self, x, train=False, rng=None, noise=None):
        _check_input(x, self.n_in)
        if not train:
            return x @ self.weight_mean.T + self.bias_mean, (x, None)
        if noise is None:
            if rng is None:
                raise ValueError("train-mode variational layer needs an rng")
            noise = self.sample_noise(x.shape[0], rng)
        w_sigma = self.weight_sigma
        b_sigma = self.bias_sigma
        if np.any(w_sigma < 0) or np.any(b_sigma < 0):
            raise DomainError("posterior scale must be non-negative")
        delta_w = w_sigma * noise.weight_eps
        perturb = ((x * noise.sign_in) @ delta_w.T) * noise.sign_out
        bias = self.bias_mean + b_sigma * noise.bias_eps
        out = x @ self.weight_mean.T + perturb + bias
        return out, (x, noise)

    def backward(self, cache, grad):
        x, noise = cache
        if noise is None:
            grads = {
                "weight_mean": grad.T @ x,
                "weight_rho": np.zeros_like(self.weight_rho),
                "bias_mean": grad.sum(axis=0),
                "bias_rho": np.zeros_like(self.bias_rho),
            }
            return grad @ self.weight_mean, grads
        g_signed = grad * noise.sign_out
        x_signed = x * noise.sign_in
        d_sigma_w = (g_signed.T @ x_signed) * noise.weight_eps
        d_sigma_b = grad.sum(axis=0) * noise.bias_eps
        delta_w = self.weight_sigma * noise.weight_eps
        grad_in = grad @ self.weight_mean + (g_signed @ delta_w) * noise.sign_in
        grads = {
            "weight_mean": grad.T @ x,
            "weight_rho": d_sigma_w * expit(self.weight_rho),
            "bias_mean": grad.sum(axis=0),
            "bias_rho": d_sigma_b * expit(self.bias_rho),
        }
        return grad_in, grads

    def kl(self):
        return (kl_gaussian_to_standard_normal(self.weight_mean, self.weight_sigma)
                + kl_gaussian_to_standard_normal(self.bias_mean, self.bias_sigma))

    def kl_grads(self):
        """Gradient of the (unweighted) KL with respect to every parameter."""
        out = {}
        for name, mu, rho in (("weight", self.weight_mean, self.weight_rho),
                              ("bias", self.bias_mean, self.bias_rho)):
            sigma = softplus(rho)
            out[f"{name}_mean"] = mu.copy()
            out[f"{name}_rho"] = (sigma - 1.0 / sigma) * expit(rho)
        return out


def flipout_forward(layer, x, rng):
    """One stochastic Flipout pass of ``layer`` over the batch ``x``."""
    out, _ = layer.forward(np.asarray(x, dtype=float), True, rng)
    return out
