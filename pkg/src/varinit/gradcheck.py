"""Central finite-difference checks of network gradients."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .core import RandomSource
from .layers import Mode, Network, softmax_cross_entropy


@dataclass
class GradCheck:
    name: str
    index: tuple
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        # central-difference roundoff is ~eps*|loss|/h ~ 1e-11; the floor keeps exactly-zero
        # gradients (biases ahead of BatchNorm, masked units) from dividing that noise by ~0
        scale = max(abs(self.analytic), abs(self.numeric), 1e-6)
        return abs(self.analytic - self.numeric) / scale


def _loss(net: Network, x, labels, seed: int) -> float:
    # a fresh RandomSource per call reproduces the same dropout masks
    logits, _ = net.forward(x, Mode.TRAIN, RandomSource(seed))
    return softmax_cross_entropy(logits, labels)[0]


def check_gradients(net: Network, x, labels, seed: int = 0, per_param: int = 10,
                    h: float = 1e-5, include_input: bool = True) -> list[GradCheck]:
    """Compare backprop with central differences at ``per_param`` random entries of
    every parameter array (and of the input when ``include_input``)."""
    net = copy.deepcopy(net)
    x = np.array(x, dtype=np.float64)
    _, cache = net.forward(x, Mode.TRAIN, RandomSource(seed))
    _, grads, dx = net.backward_with_input(cache, labels)
    pick = RandomSource(seed).child(7)
    targets = [(name, arr, grads[name]) for name, arr in net.params().items()]
    if include_input:
        targets.append(("input", x, dx))
    out = []
    for name, arr, grad in targets:
        for _ in range(min(per_param, arr.size)):
            flat = int(pick.integers(0, arr.size))
            idx = np.unravel_index(flat, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            up = _loss(net, x, labels, seed)
            arr[idx] = orig - h
            down = _loss(net, x, labels, seed)
            arr[idx] = orig
            out.append(GradCheck(name, tuple(int(i) for i in idx), float(grad[idx]), (up - down) / (2 * h)))
    return out
