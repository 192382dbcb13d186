"""JSON checkpoints of named, shape-tagged parameter arrays.

Layout::

    {"magic": "LEMDA-CKPT", "version": 1,
     "params": {"<name>": {"shape": [..], "data": [..]}, ...}}

``data`` is the row-major flattening. Floats are written with Python's
shortest round-trip repr, so save/load is bit-exact for float64.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .gradcore import Module

MAGIC = "LEMDA-CKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def state_dict(module: Module) -> dict:
    return {name: p.data.copy() for name, p in module.named_parameters()}


def save(module: Module, path) -> None:
    params = {
        name: {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
        for name, arr in state_dict(module).items()
    }
    Path(path).write_text(json.dumps({"magic": MAGIC, "version": VERSION, "params": params}))


def load(module: Module, path) -> None:
    doc = json.loads(Path(path).read_text())
    if doc.get("magic") != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {doc.get('version')}")
    stored = doc["params"]
    named = dict(module.named_parameters())
    if set(stored) != set(named):
        missing = sorted(set(named) - set(stored))
        extra = sorted(set(stored) - set(named))
        raise CheckpointError(f"{path}: parameter mismatch, missing={missing} extra={extra}")
    for name, p in named.items():
        entry = stored[name]
        shape = tuple(entry["shape"])
        if shape != p.shape:
            raise CheckpointError(f"{path}: {name} has shape {shape}, expected {p.shape}")
        p.data[...] = np.asarray(entry["data"], dtype=np.float64).reshape(shape)
