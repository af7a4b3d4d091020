"""Benchmark orchestration: data generation, training, prediction files and manifests."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError, NumericDivergenceError
from ..methods import fit_network, predict
from ..nn import TrainConfig
from ..predictions import write_csv
from ..sim.io import read_dataset, write_dataset, write_split_manifest
from ..sim.noise import apply_noise
from ..sim.slides import generate_dataset
from ..sim.splits import make_split

KIND_INDEX = {"plain": 0, "dropout": 1, "variational": 2, "augmented": 3}
MANIFEST = "manifest.json"
LOG = "run.log"


def name_key(name):
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")


def prediction_name(method, trial, partition):
    return f"{method}__trial{trial}__{partition}.csv"


def parse_prediction_name(name):
    stem = name[:-4] if name.endswith(".csv") else name
    parts = stem.split("__")
    if len(parts) != 3 or not parts[1].startswith("trial") or not parts[1][5:].isdigit():
        raise DataError(f"prediction file name must be <method>__trial<k>__<partition>.csv: {name}")
    return parts[0], int(parts[1][5:]), parts[2]


def get_logger(run_dir):
    logger = logging.getLogger(f"wsiuq.{run_dir}")
    if not logger.handlers:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(Path(run_dir) / LOG)
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        logger.addHandler(handler)
        logger.setLevel(logging.INFO)
        logger.propagate = False
    return logger


@dataclass
class PreparedData:
    dataset: object
    split: dict
    train_split: dict
    x: np.ndarray
    eval_labels: np.ndarray
    train_labels: np.ndarray
    noisy_train: np.ndarray


def prepare_data(cfg):
    """Dataset, evaluation split (coverage threshold 0.25) and the noisy training labels.

    Test partitions always use the 0.25 threshold; noise variants only change
    the training and validation labels.
    """
    dataset = generate_dataset(cfg.data, tau=0.25)
    split = make_split(dataset, cfg.split)
    if cfg.train_tau != 0.25:
        train_ds = dataset.relabel(cfg.train_tau)
        train_split = make_split(train_ds, cfg.split)
        train_labels = train_ds.labels()
    else:
        train_split = split
        train_labels = dataset.labels()
    noisy = train_labels[train_split["train"]]
    if cfg.noise is not None:
        cov = dataset.tiles["coverage"].to_numpy()[train_split["train"]]
        noisy = apply_noise(cfg.noise, noisy, cov)
    return PreparedData(dataset, split, train_split, dataset.features(), dataset.labels(),
                        train_labels, noisy)


def write_data(cfg, data, run_dir):
    out = Path(run_dir) / "dataset"
    paths = write_dataset(data.dataset, out)
    paths.append(write_split_manifest(data.split, cfg.split, out / "split.json"))
    if data.train_split is not data.split:
        paths.append(write_split_manifest(data.train_split, cfg.split, out / "train_split.json"))
    return paths


def _pool_key(spec):
    kind = spec.network_kind
    if kind == "dropout":
        return (kind, spec.dropout_p)
    if kind == "variational":
        return (kind, spec.prior_weight, spec.init_sigma)
    if kind == "augmented":
        aug = spec.augmentation
        return (kind, aug.jitter_sigma, aug.scale_range, aug.rotate90)
    return (kind,)


def member_seeds(seed, trial, kind, member):
    init, train = np.random.SeedSequence([int(seed), trial, KIND_INDEX[kind], member]).generate_state(2)
    return int(init), int(train)


def run_trial(cfg, data, trial, pred_dir):
    """Train every member network this trial needs, predict, write CSVs; returns failures."""
    pools = {}
    for spec in cfg.methods:
        key = _pool_key(spec)
        need, first = pools.get(key, (0, spec))
        pools[key] = (max(need, spec.members_needed), first)
    tr, va = data.train_split["train"], data.train_split["val"]
    train_set = (data.x[tr], data.noisy_train)
    val_set = (data.x[va], data.train_labels[va])
    nets, failures = {}, []
    for key, (need, spec) in pools.items():
        members = []
        for m in range(need):
            init_seed, train_seed = member_seeds(cfg.seed, trial, spec.network_kind, m)
            tcfg = TrainConfig(**{**cfg.training.to_dict(), "seed": train_seed})
            try:
                members.append(fit_network(spec.network_kind, train_set, val_set, tcfg, init_seed,
                                           spec).network)
            except NumericDivergenceError as exc:
                members.append(None)
                failures.append({"trial": trial, "network": spec.network_kind, "member": m,
                                 "error": str(exc)})
        nets[key] = members
    tiles = data.dataset.tiles
    written = []
    for spec in cfg.methods:
        members = nets[_pool_key(spec)][: spec.members_needed]
        if any(m is None for m in members):
            failures.append({"trial": trial, "method": spec.name, "error": "member diverged"})
            continue
        for part in cfg.evaluation["partitions"]:
            idx = data.split[part]
            rng = np.random.default_rng([int(cfg.seed), trial, name_key(spec.name), name_key(part)])
            pset = predict(spec, members, data.x[idx], rng, sample_ids=idx,
                           slide_ids=tiles["slide_id"].to_numpy()[idx],
                           center_ids=tiles["center_id"].to_numpy()[idx],
                           labels=data.eval_labels[idx])
            path = Path(pred_dir) / prediction_name(spec.name, trial, part)
            write_csv(pset, path)
            written.append(path)
    return failures


def _trial_job(args):
    cfg, trial, pred_dir = args
    return run_trial(cfg, prepare_data(cfg), trial, pred_dir)


def trial_seeds(cfg):
    return {t: [int(cfg.seed), t] for t in range(cfg.trials)}


def run(cfg, data=None):
    """Train and predict every (method, trial); returns the run directory."""
    run_dir = cfg.run_dir()
    log = get_logger(run_dir)
    start = time.time()
    log.info("run %s: %d methods x %d trials", cfg.run_hash(), len(cfg.methods), cfg.trials)
    data = data or prepare_data(cfg)
    write_data(cfg, data, run_dir)
    pred_dir = run_dir / "predictions"
    pred_dir.mkdir(parents=True, exist_ok=True)
    failures = []
    if cfg.jobs > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for f in pool.map(_trial_job, [(cfg, t, pred_dir) for t in range(cfg.trials)]):
                failures += f
    else:
        for t in range(cfg.trials):
            failures += run_trial(cfg, data, t, pred_dir)
            log.info("trial %d done after %.1fs", t, time.time() - start)
    completed = {m: sorted({t for t in range(cfg.trials)}
                           - {f["trial"] for f in failures if f.get("method") == m})
                 for m in cfg.method_names}
    record = {"config_hash": cfg.run_hash(), "config": cfg.to_dict(),
              "trial_seeds": trial_seeds(cfg), "failures": failures, "completed": completed}
    record["config"].pop("out")
    record["config"].pop("jobs")
    (run_dir / "run_record.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    write_manifest(run_dir)
    log.info("run finished in %.1fs", time.time() - start)
    return run_dir


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(run_dir):
    """Hash every emitted file except the manifest and the timestamped log."""
    run_dir = Path(run_dir)
    files = {}
    for path in sorted(run_dir.rglob("*")):
        rel = path.relative_to(run_dir).as_posix()
        if path.is_file() and rel not in (MANIFEST, LOG):
            files[rel] = file_sha256(path)
    (run_dir / MANIFEST).write_text(json.dumps({"files": files}, indent=2, sort_keys=True) + "\n")
    return files


def verify_manifest(run_dir):
    """List of problems (missing, changed or unlisted files); empty if the manifest holds."""
    run_dir = Path(run_dir)
    try:
        listed = json.loads((run_dir / MANIFEST).read_text())["files"]
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read manifest: {exc}", run_dir / MANIFEST) from exc
    problems = []
    for rel, digest in listed.items():
        path = run_dir / rel
        if not path.is_file():
            problems.append(f"missing {rel}")
        elif file_sha256(path) != digest:
            problems.append(f"changed {rel}")
    for path in run_dir.rglob("*"):
        rel = path.relative_to(run_dir).as_posix()
        if path.is_file() and rel not in listed and rel not in (MANIFEST, LOG):
            problems.append(f"unlisted {rel}")
    return problems


def load_tiles(run_dir):
    """Tile table of a run, or None when the run holds only external predictions."""
    directory = Path(run_dir) / "dataset"
    if not (directory / "tiles.csv").is_file():
        return None
    return read_dataset(directory)
