"""Dataset CSV and JSON split-manifest I/O."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import DataError
from .slides import DataConfig, Dataset, SlideSpec

BASE_COLUMNS = ["slide_id", "center_id", "x", "y", "coverage", "border", "label"]


def write_dataset(dataset, directory):
    """Write ``tiles.csv`` and ``slides.json``; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tiles_path = directory / "tiles.csv"
    dataset.tiles[BASE_COLUMNS + dataset.feature_columns].to_csv(
        tiles_path, index=False, lineterminator="\n")
    meta = {"config": dataset.config.to_dict(), "tau": dataset.tau,
            "slides": [s.to_dict() for s in dataset.slides]}
    slides_path = directory / "slides.json"
    slides_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return [tiles_path, slides_path]


def read_dataset(directory):
    directory = Path(directory)
    try:
        meta = json.loads((directory / "slides.json").read_text())
        tiles = pd.read_csv(directory / "tiles.csv", dtype={"slide_id": str},
                            float_precision="round_trip")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read dataset: {exc}", directory) from exc
    missing = [c for c in BASE_COLUMNS if c not in tiles.columns]
    if missing:
        raise DataError(f"tiles.csv lacks columns {missing}", directory / "tiles.csv", 1)
    slides = [SlideSpec.from_dict(s) for s in meta["slides"]]
    return Dataset(tiles, slides, DataConfig.from_dict(meta["config"]), meta["tau"])


def write_split_manifest(split, spec, path):
    doc = {"split": spec.to_dict(), "id_centers": list(spec.id_centers),
           "ood_centers": list(spec.ood_centers), "test_slides": split["test_slides"],
           "partitions": {k: np.asarray(v).tolist() for k, v in split.items()
                          if k != "test_slides"}}
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")
    return Path(path)


def read_split_manifest(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read split manifest: {exc}", path) from exc
    split = {k: np.asarray(v, dtype=int) for k, v in doc["partitions"].items()}
    split["test_slides"] = doc["test_slides"]
    return split, doc
