"""Uncertainty methods: each turns trained networks into a :class:`PredictionSet`.

Methods and the network each needs:

========================  ======================  ==============================
method                    network kind            draws per sample
========================  ======================  ==============================
baseline                  plain                   1
ensemble                  plain x n_members       n_members
mcdo                      dropout                 n_samples
svi                       variational (Flipout)   n_samples
tta                       plain, trained w/ aug   n_samples
<inner>_ensemble          inner kind x n_members  n_members * n_samples
========================  ======================  ==============================
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import build_mlp, train
from .predictions import PredictionSet

KINDS = ("baseline", "ensemble", "mcdo", "svi", "tta", "ensemble_of")
INNER_KINDS = ("baseline", "mcdo", "svi", "tta")
METHOD_NAMES = ("baseline", "ensemble", "mcdo", "mcdo_ensemble", "tta", "tta_ensemble",
                "svi", "svi_ensemble")


@dataclass(frozen=True)
class AugmentationSpec:
    """Feature-space stand-in for colour jitter and 90 degree rotations.

    Each augmented copy is ``gain * x + jitter_sigma * scale * N(0, 1)`` with a
    per-feature gain drawn uniformly from ``scale_range`` and ``scale`` the
    per-feature training std. ``rotate90`` treats the F features as a square
    grid and rotates it by a random multiple of 90 degrees.
    """

    jitter_sigma: float = 0.1
    scale_range: tuple = (0.8, 1.2)
    rotate90: bool = False

    def __post_init__(self):
        lo, hi = self.scale_range
        if self.jitter_sigma < 0:
            raise ConfigError("jitter_sigma must be non-negative")
        if not 0 < lo <= hi:
            raise ConfigError("scale_range must be a positive interval")
        object.__setattr__(self, "scale_range", (float(lo), float(hi)))

    @property
    def is_identity(self):
        return self.jitter_sigma == 0 and self.scale_range == (1.0, 1.0) and not self.rotate90


IDENTITY_AUGMENTATION = AugmentationSpec(0.0, (1.0, 1.0), False)


def augment(x, spec, rng, scale=None):
    """Return one independently augmented copy of every row of ``x``."""
    x = np.asarray(x, dtype=float)
    n, f = x.shape
    scale = np.ones(f) if scale is None else np.asarray(scale, dtype=float)
    lo, hi = spec.scale_range
    gain = rng.uniform(lo, hi, size=(n, f))
    out = gain * x + spec.jitter_sigma * scale * rng.standard_normal((n, f))
    if spec.rotate90:
        side = math.isqrt(f)
        if side * side != f:
            raise ConfigError(f"rotate90 needs a square feature grid, got F={f}")
        k = rng.integers(0, 4, size=n)
        grids = out.reshape(n, side, side)
        for r in range(1, 4):
            sel = k == r
            grids[sel] = np.rot90(grids[sel], r, axes=(1, 2))
        out = grids.reshape(n, f)
    return out


@dataclass(frozen=True)
class MethodSpec:
    kind: str = "baseline"
    inner: str | None = None
    n_members: int = 5
    n_samples: int = 10
    dropout_p: float = 0.3
    prior_weight: float = 1.0 / 128
    init_sigma: float = 1e-3
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown method kind {self.kind!r}")
        if self.kind == "ensemble_of" and self.inner not in INNER_KINDS:
            raise ConfigError("ensemble_of needs inner in " + ", ".join(INNER_KINDS))
        if self.n_members < 1 or self.n_samples < 1:
            raise ConfigError("n_members and n_samples must be at least 1")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError("dropout_p must lie in [0, 1)")
        if self.prior_weight < 0:
            raise ConfigError("prior_weight must be non-negative")

    @classmethod
    def from_name(cls, name, **overrides):
        if name.endswith("_ensemble"):
            return cls(kind="ensemble_of", inner=name[: -len("_ensemble")], **overrides)
        return cls(kind=name, **overrides)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        name = d.pop("name", None)
        if "augmentation" in d:
            aug = dict(d["augmentation"])
            if "scale_range" in aug:
                aug["scale_range"] = tuple(aug["scale_range"])
            d["augmentation"] = AugmentationSpec(**aug)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown method keys: {sorted(unknown)}")
        if name is not None:
            d.pop("kind", None)
            d.pop("inner", None)
            return cls.from_name(name, **d)
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["augmentation"]["scale_range"] = list(self.augmentation.scale_range)
        d["name"] = self.name
        return d

    @property
    def name(self):
        if self.kind == "ensemble_of":
            return "ensemble" if self.inner == "baseline" else f"{self.inner}_ensemble"
        return self.kind

    @property
    def base_kind(self):
        """The single-network method this method is built from."""
        if self.kind == "ensemble":
            return "baseline"
        if self.kind == "ensemble_of":
            return self.inner
        return self.kind

    @property
    def network_kind(self):
        return {"baseline": "plain", "mcdo": "dropout", "svi": "variational",
                "tta": "augmented"}[self.base_kind]

    @property
    def members_needed(self):
        return self.n_members if self.kind in ("ensemble", "ensemble_of") else 1

    @property
    def draws(self):
        per_member = 1 if self.base_kind == "baseline" else self.n_samples
        return self.members_needed * per_member


def _meta(kw):
    return {k: kw.get(k) for k in ("slide_ids", "center_ids", "labels")}


def _ids(inputs, sample_ids):
    return np.arange(len(inputs)) if sample_ids is None else np.asarray(sample_ids)


def predict_baseline(network, inputs, sample_ids=None, method_tag="baseline", **meta):
    probs = network.forward(inputs, "eval")
    return PredictionSet(_ids(inputs, sample_ids), probs[:, None, :], method_tag, **_meta(meta))


def _check_members(networks):
    if not networks:
        raise ConfigError("an ensemble needs at least one member")
    dims = {(n.n_features, n.n_classes) for n in networks}
    if len(dims) != 1:
        raise ShapeError(f"ensemble members disagree on input/output dims: {sorted(dims)}")


def predict_ensemble(networks, inputs, sample_ids=None, method_tag="ensemble", **meta):
    """Row ``j`` of every sample is member ``j``'s deterministic prediction."""
    _check_members(networks)
    probs = np.stack([net.forward(inputs, "eval") for net in networks], axis=1)
    return PredictionSet(_ids(inputs, sample_ids), probs, method_tag, **_meta(meta))


def predict_mcdo(network, inputs, n_samples, rng, sample_ids=None, method_tag="mcdo", **meta):
    if not network.has_dropout:
        raise ConfigError("MC dropout needs a network with at least one dropout layer")
    probs = np.stack([network.forward(inputs, "train", rng) for _ in range(n_samples)], axis=1)
    return PredictionSet(_ids(inputs, sample_ids), probs, method_tag, **_meta(meta))


def predict_svi(network, inputs, n_samples, rng, sample_ids=None, method_tag="svi", **meta):
    if not network.has_variational:
        raise ConfigError("SVI needs a network with at least one variational layer")
    probs = np.stack([network.forward(inputs, "train", rng) for _ in range(n_samples)], axis=1)
    return PredictionSet(_ids(inputs, sample_ids), probs, method_tag, **_meta(meta))


def predict_tta(network, inputs, n_samples, aug, rng, sample_ids=None, method_tag="tta", **meta):
    """Draw 0 is the clean input; draws ``1..S-1`` are independent augmentations."""
    inputs = np.asarray(inputs, dtype=float)
    rows = [network.forward(inputs, "eval")]
    for _ in range(n_samples - 1):
        rows.append(network.forward(augment(inputs, aug, rng, network.input_std), "eval"))
    return PredictionSet(_ids(inputs, sample_ids), np.stack(rows, axis=1), method_tag, **_meta(meta))


def predict_single(kind, network, inputs, n_samples, rng, aug=None, **kw):
    if kind == "baseline":
        return predict_baseline(network, inputs, **kw)
    if kind == "mcdo":
        return predict_mcdo(network, inputs, n_samples, rng, **kw)
    if kind == "svi":
        return predict_svi(network, inputs, n_samples, rng, **kw)
    if kind == "tta":
        return predict_tta(network, inputs, n_samples, aug or AugmentationSpec(), rng, **kw)
    raise ConfigError(f"unknown method kind {kind!r}")


def predict_ensemble_of(kind, networks, inputs, n_samples, rng, aug=None, sample_ids=None,
                        method_tag=None, **meta):
    """Pool ``kind`` predictions of every member, member-major.

    Members consume ``rng`` in order, so a one-member ensemble reproduces the
    inner method exactly.
    """
    _check_members(networks)
    parts = [predict_single(kind, net, inputs, n_samples, rng, aug, sample_ids=sample_ids)
             for net in networks]
    probs = np.concatenate([p.probs for p in parts], axis=1)
    tag = method_tag or ("ensemble" if kind == "baseline" else f"{kind}_ensemble")
    return PredictionSet(_ids(inputs, sample_ids), probs, tag, **_meta(meta))


def predict(spec, networks, inputs, rng, **kw):
    """Dispatch a :class:`MethodSpec` over its trained member networks."""
    if spec.kind in ("ensemble", "ensemble_of"):
        return predict_ensemble_of(spec.base_kind, networks[: spec.n_members], inputs,
                                   spec.n_samples, rng, spec.augmentation,
                                   method_tag=spec.name, **kw)
    return predict_single(spec.kind, networks[0], inputs, spec.n_samples, rng,
                          spec.augmentation, method_tag=spec.name, **kw)


def build_network(network_kind, n_features, n_classes, rng, spec=None, hidden=(64, 64),
                  input_mean=None, input_std=None):
    spec = spec or MethodSpec()
    common = dict(hidden=hidden, input_mean=input_mean, input_std=input_std)
    if network_kind in ("plain", "augmented"):
        return build_mlp(n_features, n_classes, rng, **common)
    if network_kind == "dropout":
        return build_mlp(n_features, n_classes, rng, dropout=spec.dropout_p, **common)
    if network_kind == "variational":
        return build_mlp(n_features, n_classes, rng, variational=True,
                         prior_weight=spec.prior_weight, init_sigma=spec.init_sigma, **common)
    raise ConfigError(f"unknown network kind {network_kind!r}")


def fit_network(network_kind, train_set, val_set, config, init_seed, spec=None,
                n_classes=2, hidden=(64, 64)):
    """Build and train one member network; inputs are standardised with train statistics."""
    x_tr, _ = train_set
    x_tr = np.asarray(x_tr, dtype=float)
    mean = x_tr.mean(axis=0)
    std = x_tr.std(axis=0)
    std[std == 0] = 1.0
    spec = spec or MethodSpec()
    net = build_network(network_kind, x_tr.shape[1], n_classes, np.random.default_rng(init_seed),
                        spec, hidden, mean, std)
    aug_fn = None
    if network_kind == "augmented":
        aug_fn = lambda xb, rng: augment(xb, spec.augmentation, rng, std)
    return train(net, train_set, val_set, config, augment=aug_fn)
