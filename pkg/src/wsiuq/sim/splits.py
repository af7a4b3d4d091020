"""Center-based splits: weak, strong and leave-one-out domain shift."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError
from .slides import EXCLUDED, N_CENTERS

PARTITIONS = ("train", "val", "test_id", "test_ood", "excluded")
SPLIT_KINDS = ("weak", "strong", "loo")
_ID_CENTERS = {"weak": (0, 2, 4), "strong": (0, 1, 3)}


@dataclass(frozen=True)
class SplitSpec:
    kind: str = "strong"
    center: int | None = None
    train_fraction: float = 0.75
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SPLIT_KINDS:
            raise ConfigError(f"split kind must be one of {', '.join(SPLIT_KINDS)}")
        if self.kind == "loo" and (self.center is None or not 0 <= self.center < N_CENTERS):
            raise ConfigError("leave-one-out needs a held-out center in 0..4")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown split keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return {"kind": self.kind, "center": self.center, "train_fraction": self.train_fraction,
                "seed": self.seed}

    @property
    def name(self):
        return f"loo{self.center}" if self.kind == "loo" else self.kind

    @property
    def id_centers(self):
        if self.kind == "loo":
            return tuple(c for c in range(N_CENTERS) if c != self.center)
        return _ID_CENTERS[self.kind]

    @property
    def ood_centers(self):
        return tuple(c for c in range(N_CENTERS) if c not in self.id_centers)


def median_slides(slides):
    """The two middle slides by tumor area (ties by slide id)."""
    m = len(slides)
    ordered = sorted(slides, key=lambda s: (s.tumor_area, s.slide_id))
    lo = math.ceil(m / 2) - 1
    return [ordered[lo], ordered[lo + 1]]


def make_split(dataset, spec):
    """Tile indices per partition; every tile lands in exactly one partition."""
    tiles = dataset.tiles
    labels = tiles["label"].to_numpy()
    slide_of = tiles["slide_id"].to_numpy()
    center_of = tiles["center_id"].to_numpy()
    test_slides = []
    for c in spec.id_centers:
        members = [s for s in dataset.slides if s.center_id == c]
        if len(members) < 3:
            raise DataError(f"center {c} has {len(members)} slides; at least 3 are needed")
        test_slides += [s.slide_id for s in median_slides(members)]

    excluded = labels == EXCLUDED
    is_id = np.isin(center_of, spec.id_centers)
    test_id = is_id & np.isin(slide_of, test_slides) & ~excluded
    test_ood = ~is_id & ~excluded
    pool = np.flatnonzero(is_id & ~np.isin(slide_of, test_slides) & ~excluded)
    rng = np.random.default_rng([int(spec.seed), 7])
    pool = pool[rng.permutation(len(pool))]
    n_train = int(round(spec.train_fraction * len(pool)))
    return {
        "train": np.sort(pool[:n_train]),
        "val": np.sort(pool[n_train:]),
        "test_id": np.flatnonzero(test_id),
        "test_ood": np.flatnonzero(test_ood),
        "excluded": np.flatnonzero(excluded),
        "test_slides": sorted(test_slides),
    }
