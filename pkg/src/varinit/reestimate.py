"""Post-training re-estimation of Batch Normalization variances with dropout off.

The training set is replayed in its natural order. Dropout layers pass inputs
through unchanged, no gradients are computed, and each BatchNorm layer
updates only ``running_var``:

* ``exact`` (default): running_var becomes the mean of the per-batch
  variances over the last replayed epoch.
* ``ema``: running_var continues its exponential moving average, one update
  per batch, with the layer's own momentum.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np

from .core import DataError
from .data import Dataset, batches
from .layers import Mode, Network, softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReEstimateConfig:
    epochs: int = 1
    estimator: str = "exact"  # "exact" | "ema"
    batch_size: int = 64
    also_means: bool = False  # extension: re-estimate running_mean as well

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.estimator not in ("exact", "ema"):
            raise ValueError(f"unknown estimator {self.estimator!r}")


def reestimate(net: Network, data: Dataset, cfg: ReEstimateConfig = ReEstimateConfig()) -> Network:
    """Return a copy of ``net`` whose BatchNorm ``running_var`` reflects dropout-off activations."""
    if len(data) == 0:
        raise DataError("cannot re-estimate on an empty dataset")
    out = copy.deepcopy(net)
    bns = out.batchnorms()
    if not bns:
        log.warning("network has no BatchNorm layers; re-estimation is a no-op")
        return out
    for _ in range(cfg.epochs):
        for bn in bns:
            bn.begin_reestimate(cfg.estimator, cfg.also_means)
        for x, _ in batches(data, cfg.batch_size, shuffle=False):
            out.forward(x, Mode.REESTIMATE)
        for bn in bns:
            bn.finish_reestimate()
    return out


def evaluate(net: Network, data: Dataset, batch_size: int = 1000) -> tuple[float, float]:
    """Mean cross-entropy and top-1 error rate in EVAL mode."""
    if len(data) == 0:
        raise DataError("cannot evaluate on an empty dataset")
    total_loss = 0.0
    wrong = 0
    for x, y in batches(data, batch_size, shuffle=False):
        logits = net.forward(x, Mode.EVAL)[0]
        loss, _ = softmax_cross_entropy(logits, y)
        total_loss += loss * len(y)
        wrong += int(np.sum(np.argmax(logits, axis=1) != y))
    return total_loss / len(data), wrong / len(data)
