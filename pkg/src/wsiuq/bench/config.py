"""Experiment configuration: one JSON document describing a benchmark run."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from ..methods import METHOD_NAMES, MethodSpec
from ..nn import TrainConfig
from ..sim.noise import NoiseSpec
from ..sim.slides import DataConfig
from ..sim.splits import SplitSpec
from ..slidelevel import MILConfig

EVAL_DEFAULTS = {
    "n_bins": 10,
    "measure": "confidence",
    "partitions": ["test_id", "test_ood"],
    "top_k": 16,
    "map_methods": ["ensemble"],
    "map_trial": 0,
}
PARTITION_CHOICES = ("test_id", "test_ood", "val")
TOP_LEVEL = ("data", "split", "methods", "method_defaults", "training", "noise", "evaluation",
             "mil", "trials", "seed", "out", "jobs")
# desk-scale default; the library default of 100 epochs is kept for direct use
BENCH_MAX_EPOCHS = 30


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    methods: list = field(default_factory=lambda: [MethodSpec.from_name(n) for n in METHOD_NAMES])
    training: TrainConfig = field(default_factory=lambda: TrainConfig(max_epochs=BENCH_MAX_EPOCHS))
    noise: NoiseSpec | None = None
    evaluation: dict = field(default_factory=lambda: dict(EVAL_DEFAULTS))
    mil: MILConfig = field(default_factory=MILConfig)
    trials: int = 5
    seed: int = 0
    out: str = "runs"
    jobs: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        names = [m.name for m in self.methods]
        if not names:
            raise ConfigError("at least one method is required")
        if len(set(names)) != len(names):
            raise ConfigError("method names must be unique")
        ev = self.evaluation
        unknown = set(ev) - set(EVAL_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown evaluation keys: {sorted(unknown)}")
        if any(p not in PARTITION_CHOICES for p in ev["partitions"]):
            raise ConfigError(f"partitions must be drawn from {', '.join(PARTITION_CHOICES)}")
        if ev["measure"] not in ("confidence", "normed_entropy", "variance"):
            raise ConfigError("measure must be confidence, normed_entropy or variance")
        if ev["n_bins"] < 1 or ev["top_k"] < 0:
            raise ConfigError("n_bins must be positive and top_k non-negative")

    @property
    def method_names(self):
        return [m.name for m in self.methods]

    @property
    def train_tau(self):
        return 0.25 if self.noise is None else self.noise.tau

    def to_dict(self):
        return {
            "data": self.data.to_dict(),
            "split": self.split.to_dict(),
            "methods": [m.to_dict() for m in self.methods],
            "training": {k: v for k, v in self.training.to_dict().items() if k != "seed"},
            "noise": None if self.noise is None else {"kind": self.noise.kind,
                                                      "flip_prob": self.noise.flip_prob},
            "evaluation": dict(self.evaluation),
            "mil": self.mil.to_dict(),
            "trials": self.trials,
            "seed": int(self.seed),
            "out": self.out,
            "jobs": self.jobs,
        }

    def run_hash(self):
        """Hash of every setting that can change results (``out`` and ``jobs`` excluded)."""
        d = self.to_dict()
        d.pop("out")
        d.pop("jobs")
        canonical = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def run_dir(self):
        return Path(self.out) / self.run_hash()

    def replace(self, **changes):
        d = copy.copy(self)
        for k, v in changes.items():
            setattr(d, k, v)
        d.__post_init__()
        return d


def _section(d, key, cls, default):
    if key not in d or d[key] is None:
        return default
    if not isinstance(d[key], dict):
        raise ConfigError(f"section {key!r} must be an object")
    return cls.from_dict(d[key])


def config_from_dict(d, overrides=None):
    """Build an :class:`ExperimentConfig`; ``overrides`` (e.g. CLI flags) win over ``d``."""
    d = dict(d)
    for k, v in (overrides or {}).items():
        if v is not None:
            d[k] = v
    unknown = set(d) - set(TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    seed = int(d.get("seed", 0))
    data = dict(d.get("data") or {})
    data.setdefault("seed", seed)
    split = dict(d.get("split") or {})
    split.setdefault("seed", seed)
    training = dict(d.get("training") or {})
    if "seed" in training:
        raise ConfigError("training.seed is derived from the run seed; set the top-level seed")
    training.setdefault("max_epochs", BENCH_MAX_EPOCHS)
    defaults = dict(d.get("method_defaults") or {})
    methods = []
    for entry in d.get("methods") or list(METHOD_NAMES):
        entry = {"name": entry} if isinstance(entry, str) else dict(entry)
        methods.append(MethodSpec.from_dict({**defaults, **entry}))
    noise = None
    if d.get("noise"):
        noise = NoiseSpec(**{**d["noise"], "seed": seed})
    evaluation = {**EVAL_DEFAULTS, **(d.get("evaluation") or {})}
    try:
        return ExperimentConfig(
            data=DataConfig.from_dict(data),
            split=SplitSpec.from_dict(split),
            methods=methods,
            training=TrainConfig.from_dict(training),
            noise=noise,
            evaluation=evaluation,
            mil=_section(d, "mil", MILConfig, MILConfig()),
            trials=int(d.get("trials", 5)),
            seed=seed,
            out=str(d.get("out", "runs")),
            jobs=int(d.get("jobs", 1)),
        )
    except TypeError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_config(path, overrides=None):
    try:
        d = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    return config_from_dict(d, overrides)


def default_config(**overrides):
    return config_from_dict({}, overrides)
