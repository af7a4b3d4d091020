"""Reports from prediction files: summary tables, curves, bins, tile listings, maps."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import DataError
from ..measures import MEASURES, normed_entropy_of, score_set
from ..metrics import (
    accuracy,
    accuracy_reject_curve,
    balanced_accuracy,
    ece,
    per_slide_results,
    median_iqr,
    summarize,
    top_bottom_k,
    write_frame,
    write_json,
)
from ..predictions import read_csv
from ..slidelevel import stitch_confidence_map
from .pipeline import load_tiles, parse_prediction_name, write_manifest

TRIAL_METRICS = ("accuracy", "balanced_accuracy", "ece", "auarc_accuracy", "auarc_balanced",
                 "accuracy_at_0", "accuracy_at_20", "slide_median_balanced_accuracy",
                 "slide_median_ece", "slide_median_auarc")


def load_prediction_dir(pred_dir):
    """All prediction files of a directory keyed by ``(method, trial, partition)``."""
    pred_dir = Path(pred_dir)
    if not pred_dir.is_dir():
        raise DataError("prediction directory not found", pred_dir)
    sets = {}
    for path in sorted(pred_dir.glob("*.csv")):
        method, trial, part = parse_prediction_name(path.name)
        sets[(method, trial, part)] = read_csv(path, method_tag=method)
    if not sets:
        raise DataError("no prediction files found", pred_dir)
    return sets


def _ordered(keys, preferred=None):
    methods = sorted({k[0] for k in keys})
    if preferred:
        methods = [m for m in preferred if m in methods] + [m for m in methods if m not in preferred]
    parts = sorted({k[2] for k in keys})
    return methods, parts


def trial_metrics(pset, measure="confidence", n_bins=10):
    if pset.labels is None or np.any(pset.labels < 0):
        raise DataError(f"predictions of {pset.method_tag} lack ground-truth labels")
    mean = pset.mean_probs()
    pred = mean.argmax(axis=1)
    y = pset.labels
    u = score_set(pset, measure).uncertainty
    acc_curve = accuracy_reject_curve(u, pred, y, "accuracy")
    bal_curve = accuracy_reject_curve(u, pred, y, "balanced_accuracy")
    out = {
        "accuracy": accuracy(pred, y),
        "balanced_accuracy": balanced_accuracy(pred, y),
        "ece": ece(mean.max(axis=1), pred == y, n_bins)[0],
        "auarc_accuracy": acc_curve.auarc,
        "auarc_balanced": bal_curve.auarc,
        "accuracy_at_0": acc_curve.value_at(0.0),
        "accuracy_at_20": acc_curve.value_at(0.2),
    }
    if pset.slide_ids is not None:
        slides = per_slide_results(pset, u, n_bins)
        out["slide_median_balanced_accuracy"] = median_iqr([s.balanced_accuracy for s in slides])[0]
        out["slide_median_ece"] = median_iqr([s.ece for s in slides])[0]
        out["slide_median_auarc"] = median_iqr([s.auarc for s in slides])[0]
    return out, acc_curve, bal_curve


def border_entropy(pset, tiles):
    """Mean normalised entropy of the mean prediction over border and interior tumor tiles."""
    cov = tiles["coverage"].to_numpy()[pset.sample_ids]
    h = normed_entropy_of(pset.mean_probs())
    border = (cov > 0) & (cov < 1)
    interior = cov == 1
    if not border.any() or not interior.any():
        return None
    return {"border": float(h[border].mean()), "interior": float(h[interior].mean())}


def evaluate_sets(sets, evaluation, method_order=None, tiles=None, expected_trials=None):
    """Compute the report document and plot-ready frames from in-memory prediction sets."""
    measure = evaluation.get("measure", "confidence")
    n_bins = evaluation.get("n_bins", 10)
    methods, parts = _ordered(sets, method_order)
    summary, frames = {}, {}
    for method in methods:
        summary[method] = {}
        for part in parts:
            keys = sorted(k for k in sets if k[0] == method and k[2] == part)
            if not keys:
                continue
            per_trial, acc_curves, bal_curves, conf, hits, entropy = {}, [], [], [], [], []
            for key in keys:
                pset = sets[key]
                metrics, ac, bc = trial_metrics(pset, measure, n_bins)
                if tiles is not None:
                    be = border_entropy(pset, tiles.tiles)
                    if be is not None:
                        metrics["entropy_border"] = be["border"]
                        metrics["entropy_interior"] = be["interior"]
                per_trial[str(key[1])] = metrics
                acc_curves.append(ac)
                bal_curves.append(bc)
                mean = pset.mean_probs()
                conf.append(mean.max(axis=1))
                hits.append(mean.argmax(axis=1) == pset.labels)
            names = sorted({m for v in per_trial.values() for m in v})
            entry = {"trials": per_trial, "n_trials": len(keys),
                     "summary": {m: summarize([v[m] for v in per_trial.values() if m in v])
                                 for m in names}}
            if expected_trials is not None and len(keys) < expected_trials:
                entry["incomplete"] = f"{len(keys)} of {expected_trials} trials completed"
            summary[method][part] = entry
            same_n = len({len(c.values) for c in acc_curves}) == 1
            if same_n:
                frames[f"curves/{method}__{part}__accuracy.csv"] = pd.DataFrame({
                    "reject_fraction": acc_curves[0].reject_fractions,
                    "metric_value": np.mean([c.values for c in acc_curves], axis=0)})
                frames[f"curves/{method}__{part}__balanced_accuracy.csv"] = pd.DataFrame({
                    "reject_fraction": bal_curves[0].reject_fractions,
                    "metric_value": np.mean([c.values for c in bal_curves], axis=0)})
            _, bins = ece(np.concatenate(conf), np.concatenate(hits), n_bins)
            frames[f"calibration/{method}__{part}.csv"] = bins.to_frame()
            frames.update(_tile_listing(sets[keys[0]], method, part, measure,
                                        evaluation.get("top_k", 16), tiles))
    report = {"measure": measure, "n_bins": n_bins, "methods": methods, "partitions": parts,
              "results": summary}
    frames["table1.csv"] = _table1(summary)
    frames["table2.csv"] = _table2(summary)
    return report, frames


def _tile_listing(pset, method, part, measure, k, tiles):
    k = min(k, pset.n_samples)
    if k == 0:
        return {}
    u = score_set(pset, measure).uncertainty
    certain, uncertain = top_bottom_k(u, k, labels=pset.labels)
    rows = []
    for which, entries in (("certain", certain), ("uncertain", uncertain)):
        for rank, (i, score, label) in enumerate(entries):
            row = {"list": which, "rank": rank, "sample_id": int(pset.sample_ids[i]),
                   "slide_id": None if pset.slide_ids is None else pset.slide_ids[i],
                   "label": label, "uncertainty": score}
            if tiles is not None:
                t = tiles.tiles.iloc[int(pset.sample_ids[i])]
                row.update(x=int(t["x"]), y=int(t["y"]), coverage=float(t["coverage"]),
                           border=int(t["border"]))
            rows.append(row)
    return {f"tiles/{method}__{part}.csv": pd.DataFrame(rows)}


def _table1(summary):
    rows = []
    for method, parts in summary.items():
        for part, e in parts.items():
            s = e["summary"]
            rows.append({"method": method, "partition": part, "n_trials": e["n_trials"],
                         "auarc_balanced_mean": s["auarc_balanced"]["mean"],
                         "auarc_balanced_std": s["auarc_balanced"]["std"],
                         "auarc_accuracy_mean": s["auarc_accuracy"]["mean"],
                         "auarc_accuracy_std": s["auarc_accuracy"]["std"]})
    return pd.DataFrame(rows)


def _table2(summary):
    rows = []
    for method, parts in summary.items():
        for part, e in parts.items():
            s = e["summary"]
            if "slide_median_balanced_accuracy" not in s:
                continue
            rows.append({"method": method, "partition": part,
                         "balanced_accuracy_median": s["slide_median_balanced_accuracy"]["median"],
                         "balanced_accuracy_iqr": s["slide_median_balanced_accuracy"]["iqr"],
                         "ece_median": s["slide_median_ece"]["median"],
                         "ece_iqr": s["slide_median_ece"]["iqr"]})
    return pd.DataFrame(rows)


def confidence_maps(sets, tiles, methods, trial, out_dir):
    """Tumor-probability maps of every slide in the ID test partition."""
    written = []
    for method in methods:
        key = (method, trial, "test_id")
        if key not in sets:
            continue
        pset = sets[key]
        t = tiles.tiles.iloc[pset.sample_ids]
        tumor = pset.mean_probs()[:, 1]
        grid = {s.slide_id: (s.width, s.height) for s in tiles.slides}
        for slide in sorted(set(pset.slide_ids.tolist())):
            m = pset.slide_ids == slide
            w, h = grid[slide]
            cmap = stitch_confidence_map(t["x"].to_numpy()[m], t["y"].to_numpy()[m], tumor[m],
                                         w, h, slide)
            written += cmap.write(Path(out_dir) / method)
    return written


def write_reports(report, frames, reports_dir):
    reports_dir = Path(reports_dir)
    write_json(report, reports_dir / "summary.json")
    for rel, frame in frames.items():
        write_frame(frame, reports_dir / rel)


def evaluate_run(run_dir, evaluation=None, pred_dir=None):
    """Evaluate a run directory (or external predictions copied into one) and write reports."""
    run_dir = Path(run_dir)
    record_path = run_dir / "run_record.json"
    record = json.loads(record_path.read_text()) if record_path.is_file() else None
    if evaluation is None:
        evaluation = record["config"]["evaluation"] if record else {}
    order = [m["name"] for m in record["config"]["methods"]] if record else None
    trials = record["config"]["trials"] if record else None
    sets = load_prediction_dir(pred_dir or run_dir / "predictions")
    tiles = load_tiles(run_dir)
    report, frames = evaluate_sets(sets, evaluation, order, tiles, trials)
    reports_dir = run_dir / "reports"
    write_reports(report, frames, reports_dir)
    if tiles is not None:
        confidence_maps(sets, tiles, evaluation.get("map_methods", []),
                        evaluation.get("map_trial", 0), reports_dir / "maps")
    write_manifest(run_dir)
    return report


def compare_measures(sets, method_order=None):
    """Balanced-accuracy AUARC for every (method, partition, measure), averaged over trials."""
    methods, parts = _ordered(sets, method_order)
    rows, notes = [], []
    for method in methods:
        for part in parts:
            keys = sorted(k for k in sets if k[0] == method and k[2] == part)
            if not keys:
                continue
            row = {"method": method, "partition": part}
            for measure in MEASURES:
                values = []
                for key in keys:
                    pset = sets[key]
                    if measure == "variance" and pset.n_draws < 2:
                        break
                    scores = score_set(pset, measure)
                    if measure == "variance" and not np.any(scores.values):
                        notes.append(f"{method}/{part}/trial{key[1]}: all variance scores are 0; "
                                     "rejection order is the sample index")
                    pred = pset.predicted_labels()
                    values.append(accuracy_reject_curve(scores.uncertainty, pred, pset.labels,
                                                        "balanced_accuracy").auarc)
                if len(values) < len(keys):
                    row[measure] = None
                    notes.append(f"{method}/{part}: variance skipped (one draw per sample)")
                else:
                    row[measure] = float(np.mean(values))
            binary = sets[keys[0]].n_classes == 2
            row["binary_equivalence"] = (abs(row["confidence"] - row["normed_entropy"]) <= 1e-12
                                         if binary else None)
            rows.append(row)
    return rows, notes
