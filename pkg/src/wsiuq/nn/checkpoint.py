"""Versioned binary checkpoints for :class:`Network`.

Layout: the magic line ``SUQNET1\\n``, one line of JSON describing layers,
shapes and array offsets, then the raw little-endian float64 payload.
"""
from __future__ import annotations

import io
import json

import numpy as np

from ..errors import DataError
from .layers import Dense, Dropout, ReLU, VariationalDense
from .network import Network

MAGIC = b"SUQNET1\n"


def dumps(network):
    arrays = []
    layers = []

    def put(a):
        arrays.append(np.ascontiguousarray(a, dtype="<f8"))
        return {"index": len(arrays) - 1, "shape": list(a.shape)}

    for layer in network.layers:
        entry = {"kind": layer.kind}
        if isinstance(layer, Dropout):
            entry["p"] = layer.p
        elif isinstance(layer, VariationalDense):
            entry["prior_weight"] = layer.prior_weight
        entry["arrays"] = {k: put(v) for k, v in layer.params().items()}
        layers.append(entry)
    header = {
        "layers": layers,
        "input_mean": put(network.input_mean),
        "input_std": put(network.input_std),
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for a in arrays:
        buf.write(a.tobytes())
    return buf.getvalue()


def loads(blob):
    if not blob.startswith(MAGIC):
        raise DataError("not a network checkpoint (bad magic header)")
    body = blob[len(MAGIC):]
    nl = body.index(b"\n")
    header = json.loads(body[:nl])
    payload = body[nl + 1:]

    specs = []
    for entry in header["layers"]:
        specs.extend(entry["arrays"].values())
    specs += [header["input_mean"], header["input_std"]]
    specs.sort(key=lambda s: s["index"])
    arrays, offset = {}, 0
    for s in specs:
        size = int(np.prod(s["shape"])) * 8
        if offset + size > len(payload):
            raise DataError("truncated network checkpoint")
        arrays[s["index"]] = np.frombuffer(payload[offset:offset + size], "<f8").reshape(s["shape"]).copy()
        offset += size

    def get(s):
        return arrays[s["index"]]

    layers = []
    for entry in header["layers"]:
        a = {k: get(v) for k, v in entry["arrays"].items()}
        kind = entry["kind"]
        if kind == "dense":
            layers.append(Dense(a["weights"], a["bias"]))
        elif kind == "variational":
            layers.append(VariationalDense(a["weight_mean"], a["weight_rho"], a["bias_mean"],
                                           a["bias_rho"], entry["prior_weight"]))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "dropout":
            layers.append(Dropout(entry["p"]))
        else:
            raise DataError(f"unknown layer kind {kind!r} in checkpoint")
    return Network(layers, get(header["input_mean"]), get(header["input_std"]))


def save(network, path):
    with open(path, "wb") as fh:
        fh.write(dumps(network))


def load(path):
    with open(path, "rb") as fh:
        return loads(fh.read())
