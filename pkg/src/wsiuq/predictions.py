"""PredictionSet: S stochastic predictive distributions per sample, plus CSV I/O.

CSV schema (one row per sample and draw)::

    sample_id,slide_id,center_id,label,draw,p0,...,p{C-1}

Rows of one sample must be contiguous with draws ``0..S-1`` in order. Floats
are written with shortest round-trip repr, so write/read is lossless.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError, DomainError, ShapeError

ROW_TOL = 1e-9
META_COLUMNS = ["sample_id", "slide_id", "center_id", "label", "draw"]


@dataclass
class PredictionSet:
    """``probs`` has shape ``(n_samples, n_draws, n_classes)``."""

    sample_ids: np.ndarray
    probs: np.ndarray
    method_tag: str = "unknown"
    slide_ids: np.ndarray | None = None
    center_ids: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        self.sample_ids = np.asarray(self.sample_ids)
        if self.probs.ndim != 3 or self.probs.shape[1] < 1:
            raise ShapeError("probs must have shape (samples, draws >= 1, classes)")
        n = self.probs.shape[0]
        if self.sample_ids.shape != (n,):
            raise ShapeError("one sample id per sample is required")
        for name in ("slide_ids", "center_ids", "labels"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value)
                if value.shape != (n,):
                    raise ShapeError(f"{name} must have one entry per sample")
                setattr(self, name, value)
        if not np.all(np.isfinite(self.probs)) or np.any(self.probs < 0):
            raise DomainError("probabilities must be finite and non-negative")
        if n and np.max(np.abs(self.probs.sum(axis=2) - 1.0)) > ROW_TOL:
            raise DomainError("every draw must sum to one")

    @property
    def n_samples(self):
        return self.probs.shape[0]

    @property
    def n_draws(self):
        return self.probs.shape[1]

    @property
    def n_classes(self):
        return self.probs.shape[2]

    def mean_probs(self):
        """Mean predictive distribution per sample, shape ``(n_samples, C)``."""
        return self.probs.mean(axis=1)

    def predicted_labels(self):
        return self.mean_probs().argmax(axis=1)

    def subset(self, mask):
        mask = np.asarray(mask)
        pick = lambda a: None if a is None else a[mask]
        return PredictionSet(self.sample_ids[mask], self.probs[mask], self.method_tag,
                             pick(self.slide_ids), pick(self.center_ids), pick(self.labels))


def mean_prediction(pset, index):
    """Arithmetic mean over the draws of sample ``index``."""
    return pset.probs[index].mean(axis=0)


def to_frame(pset):
    n, s, c = pset.probs.shape
    rep = lambda a, fill: np.repeat(np.full(n, fill) if a is None else a, s)
    frame = pd.DataFrame({
        "sample_id": np.repeat(pset.sample_ids, s),
        "slide_id": rep(pset.slide_ids, ""),
        "center_id": rep(pset.center_ids, -1),
        "label": rep(pset.labels, -1),
        "draw": np.tile(np.arange(s), n),
    })
    flat = pset.probs.reshape(n * s, c)
    for k in range(c):
        frame[f"p{k}"] = flat[:, k]
    return frame


def write_csv(pset, path):
    """Write the CSV with shortest round-trip float repr (lossless)."""
    n, s, c = pset.probs.shape
    rep = lambda a, fill: [fill] * n if a is None else [str(v) for v in a.tolist()]
    meta = [f"{i},{sl},{ce},{lb}," for i, sl, ce, lb in zip(
        [str(v) for v in pset.sample_ids.tolist()], rep(pset.slide_ids, ""),
        rep(pset.center_ids, "-1"), rep(pset.labels, "-1"))]
    flat = pset.probs.reshape(n * s, c).tolist()
    draws = [str(d) for d in range(s)]
    lines = [",".join(META_COLUMNS + [f"p{k}" for k in range(c)])]
    lines += [meta[r // s] + draws[r % s] + "," + ",".join(map(repr, row))
              for r, row in enumerate(flat)]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")


def _diagnose(text, path, n_classes):
    """Slow re-parse that pinpoints the first unparsable value.

    Tokens such as ``nan`` or ``inf`` parse here but not in the fast path; the
    cast frame is returned so the value checks can report their line.
    """
    frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False)
    casts = [("sample_id", int), ("center_id", int), ("label", int), ("draw", int)]
    casts += [(f"p{k}", float) for k in range(n_classes)]
    for i in range(len(frame)):
        for col, caster in casts:
            value = frame[col].iloc[i]
            try:
                caster(value)
            except (TypeError, ValueError):
                raise DataError(f"column {col!r} has non-numeric value {value!r}",
                                path, i + 2) from None
    for col, caster in casts:
        frame[col] = frame[col].map(caster)
    return frame


def read_csv(path, method_tag=None):
    """Parse a prediction CSV, raising :class:`DataError` with a line number on bad input."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read predictions: {exc}", path) from exc
    header = text.split("\n", 1)[0].strip().split(",")
    if header[:5] != META_COLUMNS or len(header) < 6:
        raise DataError(f"header must start with {','.join(META_COLUMNS)},p0,...", path, 1)
    n_classes = len(header) - 5
    if header[5:] != [f"p{k}" for k in range(n_classes)]:
        raise DataError("probability columns must be p0..p{C-1}", path, 1)
    dtypes = {"sample_id": np.int64, "slide_id": str, "center_id": np.int64,
              "label": np.int64, "draw": np.int64}
    dtypes.update({f"p{k}": np.float64 for k in range(n_classes)})
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=dtypes, keep_default_na=False,
                            float_precision="round_trip")
    except pd.errors.ParserError as exc:
        msg = str(exc)
        digits = [int(t) for t in msg.replace(",", " ").split() if t.isdigit()]
        raise DataError(f"malformed CSV ({msg})", path, digits[-1] if digits else None) from exc
    except (TypeError, ValueError):
        frame = _diagnose(text, path, n_classes)
    if len(frame) == 0:
        raise DataError("prediction file has no rows", path, 2)
    numeric = {c: frame[c].to_numpy() for c in frame.columns if c != "slide_id"}

    draw = numeric["draw"]
    starts = np.flatnonzero(draw == 0)
    if len(starts) == 0 or starts[0] != 0:
        raise DataError("first row of every sample must be draw 0", path, 2)
    s = starts[1] if len(starts) > 1 else len(frame)
    if len(frame) % s or not np.array_equal(draw, np.tile(np.arange(s), len(frame) // s)):
        wrong = np.flatnonzero(draw != np.tile(np.arange(s), len(frame) // s + 1)[:len(frame)])
        bad = int(wrong[0]) if len(wrong) else len(frame) - 1
        raise DataError(f"draws must run 0..{s - 1} contiguously for every sample", path, bad + 2)
    n = len(frame) // s

    sid = numeric["sample_id"].reshape(n, s)
    if np.any(sid != sid[:, :1]):
        bad = int(np.flatnonzero((sid != sid[:, :1]).reshape(-1))[0])
        raise DataError("sample_id changes within a sample's draws", path, bad + 2)
    probs = np.stack([numeric[f"p{k}"] for k in range(n_classes)], axis=1).reshape(n, s, n_classes)
    row_err = np.abs(probs.sum(axis=2) - 1.0).reshape(-1)
    neg = (probs < 0).any(axis=2).reshape(-1) | ~np.isfinite(probs).all(axis=2).reshape(-1)
    if np.any(row_err > ROW_TOL) or np.any(neg):
        bad = int(np.flatnonzero((row_err > ROW_TOL) | neg)[0])
        raise DataError("probabilities must be non-negative and sum to 1", path, bad + 2)

    slide = frame["slide_id"].to_numpy()[::s]
    return PredictionSet(
        sample_ids=sid[:, 0],
        probs=probs,
        method_tag=method_tag or path.stem,
        slide_ids=slide.astype(str),
        center_ids=numeric["center_id"][::s],
        labels=numeric["label"][::s],
    )
