"""Multi-run experiment suites: label noise, leave-one-out ranking, measure comparison, slides."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import DataError
from ..measures import score_set
from ..methods import MethodSpec, fit_network, predict
from ..metrics import (
    accuracy,
    accuracy_reject_curve,
    auroc_from_labels,
    rank_methods,
    summarize,
    write_frame,
    write_json,
)
from ..nn import TrainConfig
from ..predictions import write_csv
from ..sim.noise import NOISE_KINDS, NoiseSpec
from ..sim.splits import SplitSpec
from ..slidelevel import (
    AttentionMILHead,
    aggregate_top_q,
    slide_methods,
    slide_predictions_to_set,
    train_mil,
)
from .evaluate import compare_measures, evaluate_run, load_prediction_dir
from .pipeline import get_logger, prepare_data, run, write_manifest

NOISE_LABELS = {"threshold25": "25%", "threshold0": "0%", "uniform": "Uniform", "border": "Border"}
RANK_METRICS = (("auarc_balanced", True), ("balanced_accuracy", True), ("ece", False))


def _suite_dir(cfg, name):
    d = Path(cfg.out) / f"{name}-{cfg.run_hash()}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def noise_suite(cfg, variants=NOISE_KINDS):
    """Train on each label-noise variant, evaluate on the clean 25% test partitions."""
    flip = cfg.noise.flip_prob if cfg.noise is not None else 0.25
    base = cfg.replace(noise=None)
    out_dir = _suite_dir(base, "noise-suite")
    doc, rows = {"flip_prob": flip, "variants": {}}, []
    for kind in variants:
        noise = None if kind == "threshold25" else NoiseSpec(kind, flip, int(cfg.seed))
        vcfg = base.replace(noise=noise)
        run_dir = run(vcfg)
        report = evaluate_run(run_dir)
        doc["variants"][NOISE_LABELS[kind]] = {"run": run_dir.name, "results": {}}
        for method, parts in report["results"].items():
            for part, entry in parts.items():
                s = entry["summary"]
                picked = {m: {"median": s[m]["median"], "iqr": s[m]["iqr"], "mean": s[m]["mean"]}
                          for m in ("accuracy", "balanced_accuracy", "ece")}
                doc["variants"][NOISE_LABELS[kind]]["results"].setdefault(method, {})[part] = picked
                rows.append({"variant": NOISE_LABELS[kind], "method": method, "partition": part,
                             **{f"{m}_{k}": v[k] for m, v in picked.items()
                                for k in ("median", "iqr")}})
    write_json(doc, out_dir / "noise_suite.json")
    write_frame(pd.DataFrame(rows), out_dir / "table5.csv")
    write_manifest(out_dir)
    return out_dir, doc


def _run_scores(run_dir):
    run_dir = Path(run_dir)
    try:
        record = json.loads((run_dir / "run_record.json").read_text())
        summary = json.loads((run_dir / "reports" / "summary.json").read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"run is missing its record or reports: {exc}", run_dir) from exc
    split = SplitSpec.from_dict(record["config"]["split"])
    return split.name, [m["name"] for m in record["config"]["methods"]], summary["results"]


def rank_runs(run_dirs, out_dir):
    """Rank methods per leave-one-out split for AUARC, balanced accuracy and ECE."""
    runs = {}
    methods = None
    for d in run_dirs:
        name, order, results = _run_scores(d)
        runs[name] = results
        methods = methods or order
    missing = [f"loo{c}" for c in range(5) if f"loo{c}" not in runs]
    if missing:
        raise DataError("rank needs all five leave-one-out runs; missing " + ", ".join(missing))
    doc, rows = {"methods": methods, "tables": {}}, []
    for part in ("test_id", "test_ood"):
        for metric, higher in RANK_METRICS:
            scores = {}
            for split in sorted(runs):
                scores[split] = {}
                for m in methods:
                    entry = runs[split].get(m, {}).get(part)
                    scores[split][m] = None if entry is None else entry["summary"][metric]["mean"]
            table = rank_methods(scores, higher, methods, metric)
            doc["tables"][f"{part}/{metric}"] = table.to_dict()
            for split, r in table.ranks.items():
                rows.append({"partition": part, "metric": metric, "split": split, **r})
    out_dir = Path(out_dir)
    write_json(doc, out_dir / "ranks.json")
    write_frame(pd.DataFrame(rows), out_dir / "table4.csv")
    return doc


def loo_runs(cfg):
    dirs = []
    for c in range(5):
        lcfg = cfg.replace(split=SplitSpec("loo", c, cfg.split.train_fraction, cfg.split.seed))
        d = run(lcfg)
        evaluate_run(d)
        dirs.append(d)
    return dirs


def measure_report(run_dir, out_dir=None):
    run_dir = Path(run_dir)
    record_path = run_dir / "run_record.json"
    order = None
    if record_path.is_file():
        order = [m["name"] for m in json.loads(record_path.read_text())["config"]["methods"]]
    rows, notes = compare_measures(load_prediction_dir(run_dir / "predictions"), order)
    out_dir = Path(out_dir) if out_dir else run_dir / "reports"
    write_json({"rows": rows, "notes": notes}, out_dir / "measures.json")
    write_frame(pd.DataFrame(rows), out_dir / "table3.csv")
    return rows, notes


def _bags(dataset, slide_ids):
    tiles = dataset.tiles
    x = dataset.features()
    sid = tiles["slide_id"].to_numpy()
    return [x[sid == s] for s in slide_ids]


def _slide_partitions(dataset, split, seed):
    """ID non-test slides split 80/20 by slide, stratified by slide label."""
    labels = dataset.slide_labels()
    specs = {s.slide_id: s for s in dataset.slides}
    test_id = list(split["test_slides"])
    rng = np.random.default_rng([int(seed), 13])
    train, val = [], []
    id_centers = set(dataset.tiles["center_id"].to_numpy()[split["train"]].tolist())
    pool = [s for s in sorted(specs) if specs[s].center_id in id_centers and s not in test_id]
    for lab in (0, 1):
        members = [s for s in pool if labels[s] == lab]
        members = [members[i] for i in rng.permutation(len(members))]
        n_val = max(1, int(round(0.2 * len(members))))
        val += members[:n_val]
        train += members[n_val:]
    test_ood = [s for s in sorted(specs) if specs[s].center_id not in id_centers]
    return {"train": sorted(train), "val": sorted(val), "test_id": sorted(test_id),
            "test_ood": sorted(test_ood)}


def slide_suite(cfg, q=0.01, n_members=5, n_samples=10):
    """Slide-label task: top-q tile aggregation versus attention-MIL ensemble and MC dropout."""
    out_dir = _suite_dir(cfg, "slide-suite")
    log = get_logger(out_dir)
    data = prepare_data(cfg)
    ds = data.dataset
    parts = _slide_partitions(ds, data.split, cfg.seed)
    labels = ds.slide_labels()
    bags = {p: _bags(ds, ids) for p, ids in parts.items()}
    ys = {p: np.array([labels[s] for s in ids]) for p, ids in parts.items()}
    tiles = ds.tiles
    x_all = ds.features()
    tumor = tiles["label"].to_numpy() == 1
    sid = tiles["slide_id"].to_numpy()
    mean = x_all[np.isin(sid, parts["train"])].mean(axis=0)
    std = x_all[np.isin(sid, parts["train"])].std(axis=0)
    doc = {"partitions": parts, "q": q, "trials": {}}
    results = {}
    for trial in range(cfg.trials):
        tseed = np.random.SeedSequence([int(cfg.seed), trial, 77]).generate_state(4)
        sets = {}
        # tile-level baseline: tumor tiles inherit their slide label
        tr = tumor & np.isin(sid, parts["train"])
        va = tumor & np.isin(sid, parts["val"])
        y_tile = np.array([labels[s] for s in sid])
        tcfg = TrainConfig(**{**cfg.training.to_dict(), "seed": int(tseed[0])})
        tile_net = fit_network("plain", (x_all[tr], y_tile[tr]), (x_all[va], y_tile[va]), tcfg,
                               int(tseed[1])).network
        spec = MethodSpec.from_name("baseline")
        for part in ("test_id", "test_ood"):
            preds = []
            for s in parts[part]:
                m = tumor & (sid == s)
                pset = predict(spec, [tile_net], x_all[m], np.random.default_rng(0),
                               slide_ids=sid[m])
                preds.append(aggregate_top_q(pset, q, s))
            sets[("tile_top_q", part)] = slide_predictions_to_set(preds, ys[part], "tile_top_q")
        heads = []
        for m in range(n_members):
            hseed = np.random.SeedSequence([int(cfg.seed), trial, 88, m]).generate_state(2)
            head = AttentionMILHead(ds.config.n_features, dropout=cfg.mil.dropout,
                                    rng=np.random.default_rng(int(hseed[0])),
                                    input_mean=mean, input_std=std)
            mcfg = cfg.mil.__class__(**{**cfg.mil.to_dict(), "seed": int(hseed[1])})
            res = train_mil(head, bags["train"], ys["train"], bags["val"], ys["val"], mcfg)
            log.info("trial %d head %d stopped at epoch %d", trial, m, res.stopped_epoch)
            heads.append(res.head)
        for part in ("test_id", "test_ood"):
            sets[("mil", part)] = slide_methods(heads[:1], bags[part], "ensemble",
                                                slide_ids=parts[part], labels=ys[part])
            sets[("mil_ensemble", part)] = slide_methods(heads, bags[part], "ensemble",
                                                         slide_ids=parts[part], labels=ys[part])
            rng = np.random.default_rng([int(cfg.seed), trial, 99])
            sets[("mil_mcdo", part)] = slide_methods(heads[:1], bags[part], "mcdo", n_samples,
                                                     rng, slide_ids=parts[part], labels=ys[part])
        trial_doc = {}
        for (method, part), pset in sets.items():
            pset.method_tag = method
            write_csv(pset, out_dir / "predictions" / f"{method}__trial{trial}__{part}.csv")
            mean_p = pset.mean_probs()
            pred = mean_p.argmax(axis=1)
            u = score_set(pset, "confidence").uncertainty
            y = pset.labels
            entry = {"accuracy": accuracy(pred, y),
                     "auroc": auroc_from_labels(mean_p[:, 1], y) if len(set(y.tolist())) == 2
                     else None,
                     "auarc": accuracy_reject_curve(u, pred, y).auarc}
            trial_doc.setdefault(method, {})[part] = entry
            for k, v in entry.items():
                results.setdefault((method, part, k), []).append(v)
        doc["trials"][str(trial)] = trial_doc
    summary = {}
    for (method, part, k), vals in sorted(results.items()):
        vals = [v for v in vals if v is not None]
        summary.setdefault(method, {}).setdefault(part, {})[k] = summarize(vals)
    doc["summary"] = summary
    write_json(doc, out_dir / "slide_suite.json")
    write_manifest(out_dir)
    return out_dir, doc
