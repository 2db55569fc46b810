"""Lossless network checkpoints.

Layout (``.npz`` archive, read with ``allow_pickle=False``):

``__manifest__``
    0-d unicode array holding JSON: ``{"format": "varinit-checkpoint",
    "version": 1, "layers": [{"type": ..., "config": {...}}, ...]}``.
``layer<i>/<name>``
    float64 arrays for every parameter and buffer of layer ``i``
    (``W``, ``b``, ``filters``, ``gamma``, ``beta``, ``running_mean``,
    ``running_var``, ``batches_seen``).
``preprocess/mean``, ``preprocess/scale``
    optional per-feature standardization applied to inputs before the
    first layer (present when the manifest has ``"preprocess": true``).

Arrays are stored as raw float64, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .activations import ActivationKind
from .data import Standardizer
from .layers import Activation, BatchNorm, Conv2d, Dense, Dropout, Network

FORMAT = "varinit-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save(net: Network, path) -> None:
    arrays = {}
    entries = []
    for i, layer in enumerate(net.layers):
        entries.append({"type": layer.kind, "config": layer.config()})
        for name, arr in layer.state().items():
            arrays[f"layer{i}/{name}"] = np.asarray(arr, dtype=np.float64)
    if net.preprocess is not None:
        arrays["preprocess/mean"] = np.asarray(net.preprocess.mean, dtype=np.float64)
        arrays["preprocess/scale"] = np.asarray(net.preprocess.scale, dtype=np.float64)
    manifest = json.dumps({"format": FORMAT, "version": VERSION, "layers": entries,
                           "preprocess": net.preprocess is not None}, sort_keys=True)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, __manifest__=np.array(manifest), **arrays)


def load(path) -> Network:
    with np.load(path, allow_pickle=False) as z:
        if "__manifest__" not in z:
            raise CheckpointError(f"{path}: missing manifest")
        manifest = json.loads(str(z["__manifest__"]))
        if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint {manifest.get('format')} "
                                  f"v{manifest.get('version')}")
        arrays = {k: z[k].copy() for k in z.files if k != "__manifest__"}
    layers = []
    for i, entry in enumerate(manifest["layers"]):
        get = lambda name: arrays[f"layer{i}/{name}"]
        cfg = entry["config"]
        kind = entry["type"]
        if kind == "dense":
            layer = Dense(get("W"), get("b"))
        elif kind == "conv2d":
            layer = Conv2d(get("filters"), get("b"), stride=cfg["stride"], padding=cfg["padding"])
        elif kind == "dropout":
            layer = Dropout(cfg["keep_prob"])
        elif kind == "activation":
            layer = Activation(ActivationKind(cfg["name"], cfg["alpha"], cfg["mu"], cfg["sigma"]))
        elif kind == "batchnorm":
            layer = BatchNorm(cfg["features"], cfg["momentum"], cfg["eps"])
            for name in ("gamma", "beta", "running_mean", "running_var", "batches_seen"):
                getattr(layer, name)[...] = get(name)
        else:
            raise CheckpointError(f"{path}: unknown layer type {kind!r}")
        layers.append(layer)
    pre = None
    if manifest.get("preprocess"):
        pre = Standardizer(arrays["preprocess/mean"], arrays["preprocess/scale"])
    return Network(layers, preprocess=pre)
