"""Synthetic slides: tumor polygons on a tile grid, coverage-blended features, scanner shifts.

A tile with tumor coverage ``c`` has base features
``c * mu_tumor + N(0, I) + slide_offset`` (the healthy mean is the origin).
Its center's scanner then applies ``gain * f + offset + noise_sigma * N(0, I)``.
On slides with slide label 1 a fraction of the tumor tiles carries an extra
shift along a direction orthogonal to ``mu_tumor``; this is the slide-level
signal for the MIL task.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd

from ..errors import ConfigError, DomainError
from .geometry import coverage_grid, star_polygon, union_area, validate_polygon

N_CENTERS = 5
EXCLUDED = -1
SCANNER_OF_CENTER = {0: 0, 1: 0, 2: 2, 3: 0, 4: 1}
SCANNER_NAMES = {0: "scanner-A", 1: "scanner-B", 2: "scanner-C"}


@dataclass(frozen=True)
class DataConfig:
    slides_per_center: int = 6
    grid: int = 24
    n_features: int = 8
    class_separation: float = 3.0
    scanner_shift: float = 1.0
    center_shift: float = 0.15
    noise_sigma: float = 0.3
    slide_offset_sigma: float = 0.1
    max_blobs: int = 3
    msi_fraction: float = 0.3
    msi_shift: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.slides_per_center < 3:
            raise ConfigError("slides_per_center must be at least 3")
        if self.grid < 4 or self.n_features < 2 or self.max_blobs < 1:
            raise ConfigError("grid must be >= 4, n_features >= 2 and max_blobs >= 1")
        for name in ("class_separation", "scanner_shift", "center_shift", "noise_sigma",
                     "slide_offset_sigma", "msi_shift"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0 <= self.msi_fraction <= 1:
            raise ConfigError("msi_fraction must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown data keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CenterProfile:
    center_id: int
    scanner_id: int
    gain: np.ndarray
    offset: np.ndarray
    noise_sigma: float

    def __post_init__(self):
        if np.any(np.asarray(self.gain) <= 0):
            raise DomainError("scanner gains must be positive")

    @classmethod
    def identity(cls, n_features, center_id=0):
        return cls(center_id, -1, np.ones(n_features), np.zeros(n_features), 0.0)

    def apply(self, features, rng):
        f = np.asarray(features, dtype=float)
        noise = rng.standard_normal(f.shape)
        return self.gain * f + self.offset + self.noise_sigma * noise


def center_profiles(cfg):
    """Profiles of the five centers. Centers sharing a scanner differ only slightly."""
    f = cfg.n_features
    scanners = {}
    for s in SCANNER_NAMES:
        rng = np.random.default_rng([cfg.seed, 1000 + s])
        shift = cfg.scanner_shift if s else 0.0
        scanners[s] = (np.exp(0.3 * shift * rng.standard_normal(f)),
                       shift * rng.standard_normal(f))
    out = {}
    for c, s in SCANNER_OF_CENTER.items():
        rng = np.random.default_rng([cfg.seed, 2000 + c])
        gain, offset = scanners[s]
        out[c] = CenterProfile(c, s, gain.copy(),
                               offset + cfg.center_shift * rng.standard_normal(f),
                               cfg.noise_sigma)
    return out


@dataclass
class SlideSpec:
    slide_id: str
    center_id: int
    width: int
    height: int
    polygons: list = field(default_factory=list)
    slide_label: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise DomainError("slide grid must be at least 1 x 1")
        if not 0 <= self.center_id < N_CENTERS:
            raise DomainError(f"center_id must lie in 0..{N_CENTERS - 1}")
        self.polygons = [validate_polygon(p, self.width, self.height) for p in self.polygons]

    @property
    def tumor_area(self):
        return union_area(self.polygons) if self.polygons else 0.0

    def to_dict(self):
        return {"slide_id": self.slide_id, "center_id": self.center_id, "width": self.width,
                "height": self.height, "slide_label": self.slide_label, "seed": self.seed,
                "tumor_area": self.tumor_area,
                "polygons": [p.tolist() for p in self.polygons]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["slide_id"], d["center_id"], d["width"], d["height"],
                   [np.asarray(p, dtype=float) for p in d["polygons"]], d["slide_label"], d["seed"])


def slide_seed(seed, slide_id):
    """Per-slide seed: the run seed combined with a hash of the slide id."""
    digest = int.from_bytes(hashlib.sha256(slide_id.encode()).digest()[:8], "little")
    return np.random.SeedSequence([int(seed), digest])


def make_slide_specs(cfg):
    specs = []
    for c in range(N_CENTERS):
        for i in range(cfg.slides_per_center):
            sid = f"c{c}_s{i:02d}"
            rng = np.random.default_rng(slide_seed(cfg.seed, "layout:" + sid))
            polys = []
            for _ in range(int(rng.integers(1, cfg.max_blobs + 1))):
                radius = rng.uniform(0.1, 0.3) * cfg.grid
                centre = rng.uniform(radius, cfg.grid - radius, 2)
                polys.append(star_polygon(centre, radius, 16, rng))
            specs.append(SlideSpec(sid, c, cfg.grid, cfg.grid, polys, (i + c) % 2,
                                   int(slide_seed(cfg.seed, sid).generate_state(1)[0])))
    return specs


def feature_directions(n_features):
    """Unit tumor direction and an orthogonal unit slide-label direction."""
    u = np.ones(n_features) / np.sqrt(n_features)
    v = np.where(np.arange(n_features) % 2 == 0, 1.0, -1.0)
    v -= v.dot(u) * u
    return u, v / np.linalg.norm(v)


def base_features(spec, cfg, coverage, rng):
    n = coverage.size
    u, v = feature_directions(cfg.n_features)
    c = coverage.reshape(-1, 1)
    f = c * cfg.class_separation * u + rng.standard_normal((n, cfg.n_features))
    f += cfg.slide_offset_sigma * rng.standard_normal(cfg.n_features)
    if spec.slide_label == 1:
        carrier = (coverage.reshape(-1) > 0) & (rng.random(n) < cfg.msi_fraction)
        f[carrier] += cfg.msi_shift * v
    return f


def generate_slide(spec, profile, cfg=None):
    """Tiles of one slide as a frame with columns ``slide_id, center_id, x, y, coverage, border, f*``."""
    cfg = cfg or DataConfig()
    cov = coverage_grid(spec.width, spec.height, spec.polygons)
    ys, xs = np.mgrid[0:spec.height, 0:spec.width]
    base_seq, noise_seq = np.random.SeedSequence(spec.seed).spawn(2)
    cov_flat = cov.reshape(-1)
    feats = base_features(spec, cfg, cov_flat, np.random.default_rng(base_seq))
    feats = profile.apply(feats, np.random.default_rng(noise_seq))
    frame = pd.DataFrame({
        "slide_id": spec.slide_id,
        "center_id": spec.center_id,
        "x": xs.reshape(-1),
        "y": ys.reshape(-1),
        "coverage": cov_flat,
        "border": ((cov_flat > 0) & (cov_flat < 1)).astype(int),
    })
    for k in range(feats.shape[1]):
        frame[f"f{k}"] = feats[:, k]
    return frame


def label_tiles(coverage, tau=0.25):
    """1 if coverage > tau, 0 if coverage == 0, otherwise ``EXCLUDED`` (-1)."""
    if not 0 <= tau < 1:
        raise DomainError("coverage threshold must lie in [0, 1)")
    cov = np.asarray(coverage, dtype=float)
    return np.where(cov > tau, 1, np.where(cov == 0, 0, EXCLUDED))


@dataclass
class Dataset:
    """All tiles of all slides plus the slide specs; ``tiles`` holds the label column."""

    tiles: pd.DataFrame
    slides: list
    config: DataConfig
    tau: float = 0.25

    @property
    def feature_columns(self):
        return [c for c in self.tiles.columns if c.startswith("f") and c[1:].isdigit()]

    def features(self, idx=None):
        f = self.tiles[self.feature_columns].to_numpy()
        return f if idx is None else f[idx]

    def labels(self, idx=None):
        y = self.tiles["label"].to_numpy()
        return y if idx is None else y[idx]

    def relabel(self, tau):
        tiles = self.tiles.copy()
        tiles["label"] = label_tiles(tiles["coverage"].to_numpy(), tau)
        return Dataset(tiles, self.slides, self.config, tau)

    def slide_labels(self):
        return {s.slide_id: s.slide_label for s in self.slides}


def generate_dataset(cfg, tau=0.25):
    specs = make_slide_specs(cfg)
    profiles = center_profiles(cfg)
    frames = [generate_slide(s, profiles[s.center_id], cfg) for s in specs]
    tiles = pd.concat(frames, ignore_index=True)
    tiles.insert(6, "label", label_tiles(tiles["coverage"].to_numpy(), tau))
    return Dataset(tiles, specs, cfg, tau)
