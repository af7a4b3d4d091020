"""Mini-batch index streams for training."""
from __future__ import annotations

import math

import numpy as np

from ..errors import DomainError


def n_batches(n, batch_size):
    return max(1, math.ceil(n / batch_size))


def balanced_batches(labels, batch_size, rng, num_batches=None):
    """Yield index batches drawn with replacement so every class is equally likely.

    Each slot first picks a class uniformly, then a sample uniformly within
    that class. One epoch is ``ceil(n / batch_size)`` batches unless
    ``num_batches`` is given.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DomainError("class-balanced sampling needs at least two classes present")
    order = np.argsort(labels, kind="stable")
    sizes = np.array([np.count_nonzero(labels == c) for c in classes])
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    if num_batches is None:
        num_batches = n_batches(len(labels), batch_size)
    for _ in range(num_batches):
        cls = rng.integers(0, len(classes), size=batch_size)
        pick = np.floor(rng.random(batch_size) * sizes[cls]).astype(int)
        yield order[offsets[cls] + pick]


def shuffled_batches(n, batch_size, rng):
    """One epoch of a random permutation cut into consecutive batches."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
