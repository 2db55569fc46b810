"""Network layers with Train, Eval and ReEstimate modes and exact backprop.

Inputs are batch-major. Dense layers flatten anything after the batch axis;
conv layers use NHWC. Parameter and statistic names are ``"<index>.<name>"``
at network level, e.g. ``"0.W"`` or ``"3.running_var"``.

Modes:

* ``TRAIN``: dropout masks with 1/p scaling; BN normalizes with batch
  statistics and folds them into its running averages.
* ``EVAL``: no dropout; BN uses its running statistics.
* ``REESTIMATE``: no dropout; BN normalizes with batch statistics but only
  ``running_var`` is updated. No gradients are produced in this mode.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import activations as act
from .core import DTYPE, ContractError, DataError, RandomSource, ShapeError, as_tensor


class Mode(enum.Enum):
    TRAIN = "train"
    EVAL = "eval"
    REESTIMATE = "reestimate"


class Layer:
    kind = "layer"

    def params(self) -> dict[str, np.ndarray]:
        """Trainable arrays (by reference)."""
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state arrays (by reference)."""
        return {}

    def state(self) -> dict[str, np.ndarray]:
        return {**self.params(), **self.buffers()}

    def config(self) -> dict:
        return {}

    def forward(self, x, mode: Mode, rng: RandomSource | None):
        raise NotImplementedError

    def backward(self, dy, cache):
        raise NotImplementedError


class Dense(Layer):
    kind = "dense"

    def __init__(self, W, b=None):
        self.W = as_tensor(W)
        if self.W.ndim != 2:
            raise ShapeError(f"dense weights must be 2-d, got {self.W.shape}")
        self.b = np.zeros(self.W.shape[1]) if b is None else as_tensor(b)

    @property
    def n_in(self) -> int:
        return self.W.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[1]

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x, mode, rng):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.n_in:
            raise ShapeError(f"dense layer expects {self.n_in} features, got {flat.shape[1]}")
        return flat @ self.W + self.b, (flat, x.shape)

    def backward(self, dy, cache):
        flat, in_shape = cache
        grads = {"W": flat.T @ dy, "b": dy.sum(axis=0)}
        return (dy @ self.W.T).reshape(in_shape), grads


class Conv2d(Layer):
    """2-d convolution (cross-correlation) over NHWC input."""

    kind = "conv2d"

    def __init__(self, filters, b=None, stride: int = 1, padding: int = 0):
        self.filters = as_tensor(filters)
        if self.filters.ndim != 4:
            raise ShapeError(f"filters must be (k_h, k_w, c_in, c_out), got {self.filters.shape}")
        self.b = np.zeros(self.filters.shape[3]) if b is None else as_tensor(b)
        self.stride = int(stride)
        self.padding = int(padding)

    def params(self):
        return {"filters": self.filters, "b": self.b}

    def config(self):
        return {"stride": self.stride, "padding": self.padding}

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        k_h, k_w = self.filters.shape[:2]
        return ((h + 2 * self.padding - k_h) // self.stride + 1,
                (w + 2 * self.padding - k_w) // self.stride + 1)

    def forward(self, x, mode, rng):
        if x.ndim != 4 or x.shape[3] != self.filters.shape[2]:
            raise ShapeError(f"conv expects NHWC input with {self.filters.shape[2]} channels, got {x.shape}")
        k_h, k_w, c_in, c_out = self.filters.shape
        s, pad = self.stride, self.padding
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        h_out, w_out = self.output_hw(x.shape[1], x.shape[2])
        if h_out < 1 or w_out < 1:
            raise ShapeError(f"input {x.shape} too small for {k_h}x{k_w} filters")
        win = sliding_window_view(xp, (k_h, k_w), axis=(1, 2))[:, ::s, ::s][:, :h_out, :w_out]
        # (N, Ho, Wo, C, kh, kw) -> (N, Ho, Wo, kh, kw, C) to match the filter layout
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, k_h * k_w * c_in)
        y = cols @ self.filters.reshape(-1, c_out) + self.b
        return y.reshape(x.shape[0], h_out, w_out, c_out), (cols, x.shape)

    def backward(self, dy, cache):
        cols, in_shape = cache
        k_h, k_w, c_in, c_out = self.filters.shape
        s, pad = self.stride, self.padding
        n, h_out, w_out, _ = dy.shape
        dflat = dy.reshape(-1, c_out)
        grads = {"filters": (cols.T @ dflat).reshape(self.filters.shape), "b": dflat.sum(axis=0)}
        dcols = (dflat @ self.filters.reshape(-1, c_out).T).reshape(n, h_out, w_out, k_h, k_w, c_in)
        dxp = np.zeros((n, in_shape[1] + 2 * pad, in_shape[2] + 2 * pad, c_in))
        for i, j in itertools.product(range(k_h), range(k_w)):
            dxp[:, i:i + s * h_out:s, j:j + s * w_out:s, :] += dcols[:, :, :, i, j, :]
        dx = dxp[:, pad:pad + in_shape[1], pad:pad + in_shape[2], :]
        return dx, grads


class Dropout(Layer):
    """Inverted dropout with keep probability ``keep_prob``."""

    kind = "dropout"

    def __init__(self, keep_prob: float):
        if not 0.0 < keep_prob <= 1.0:
            raise ValueError(f"keep_prob must lie in (0, 1], got {keep_prob}")
        self.keep_prob = float(keep_prob)
        # a pinned mask replaces random draws in TRAIN mode (testing hook)
        self.pinned_mask: np.ndarray | None = None

    def config(self):
        return {"keep_prob": self.keep_prob}

    def forward(self, x, mode, rng):
        if mode is Mode.REESTIMATE and self.pinned_mask is not None:
            raise ContractError("re-estimation must run with dropout off, but a mask is pinned")
        if mode is not Mode.TRAIN or self.keep_prob == 1.0:
            return x, None
        if self.pinned_mask is not None:
            mask = np.broadcast_to(as_tensor(self.pinned_mask), x.shape)
        else:
            if rng is None:
                raise ContractError("TRAIN mode with dropout needs a RandomSource")
            mask = rng.bernoulli(self.keep_prob, x.shape)
        return x * mask / self.keep_prob, mask

    def backward(self, dy, cache):
        if cache is None:
            return dy, {}
        return dy * cache / self.keep_prob, {}


class Activation(Layer):
    kind = "activation"

    def __init__(self, fn: act.ActivationKind):
        self.fn = fn

    def config(self):
        return {"name": self.fn.name, "alpha": self.fn.alpha, "mu": self.fn.mu, "sigma": self.fn.sigma}

    def forward(self, x, mode, rng):
        return act.apply(self.fn, x), x

    def backward(self, dy, cache):
        return dy * act.derivative(self.fn, cache), {}


@dataclass
class _Reestimator:
    estimator: str  # "ema" | "exact"
    also_means: bool = False
    var_sum: np.ndarray | None = None
    mean_sum: np.ndarray | None = None
    count: int = 0


class BatchNorm(Layer):
    """Batch normalization over the last axis (features, or channels for NHWC).

    Batch variance is the biased (1/N) estimate, used both to normalize and to
    update the running averages: ``running = momentum * running + (1 - momentum) * batch``.
    """

    kind = "batchnorm"

    def __init__(self, features: int, momentum: float = 0.9, eps: float = 1e-5):
        if not 0.0 < momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.gamma = np.ones(features)
        self.beta = np.zeros(features)
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)
        self.batches_seen = np.zeros(1)
        self.momentum = float(momentum)
        self.eps = float(eps)
        self._reest: _Reestimator | None = None

    @property
    def features(self) -> int:
        return self.gamma.shape[0]

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var,
                "batches_seen": self.batches_seen}

    def config(self):
        return {"features": self.features, "momentum": self.momentum, "eps": self.eps}

    def begin_reestimate(self, estimator: str = "exact", also_means: bool = False):
        if estimator not in ("ema", "exact"):
            raise ValueError(f"unknown estimator {estimator!r}")
        self._reest = _Reestimator(estimator, also_means)

    def finish_reestimate(self):
        r, self._reest = self._reest, None
        if r is None or r.estimator == "ema" or r.count == 0:
            return
        self.running_var[...] = r.var_sum / r.count
        if r.also_means:
            self.running_mean[...] = r.mean_sum / r.count

    def forward(self, x, mode, rng):
        if x.shape[-1] != self.features:
            raise ShapeError(f"batchnorm expects {self.features} features, got {x.shape}")
        axes = tuple(range(x.ndim - 1))
        if mode is Mode.EVAL:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            return (x - self.running_mean) * inv_std * self.gamma + self.beta, None
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        m = self.momentum
        if mode is Mode.TRAIN:
            self.running_mean[...] = m * self.running_mean + (1.0 - m) * mean
            self.running_var[...] = m * self.running_var + (1.0 - m) * var
            self.batches_seen += 1
        else:
            self._reestimate_update(mean, var)
        return xhat * self.gamma + self.beta, (xhat, inv_std)

    def _reestimate_update(self, mean, var):
        r = self._reest
        if r is None or r.estimator == "ema":
            self.running_var[...] = self.momentum * self.running_var + (1.0 - self.momentum) * var
            if r is not None and r.also_means:
                self.running_mean[...] = self.momentum * self.running_mean + (1.0 - self.momentum) * mean
            return
        r.var_sum = var.copy() if r.var_sum is None else r.var_sum + var
        r.mean_sum = mean.copy() if r.mean_sum is None else r.mean_sum + mean
        r.count += 1

    def backward(self, dy, cache):
        if cache is None:
            raise ContractError("batchnorm backward needs a TRAIN-mode cache")
        xhat, inv_std = cache
        axes = tuple(range(dy.ndim - 1))
        n = dy.size // dy.shape[-1]
        grads = {"gamma": (dy * xhat).sum(axis=axes), "beta": dy.sum(axis=axes)}
        dxhat = dy * self.gamma
        dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        return dx, grads


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient with respect to the logits."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DataError(f"expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise DataError(f"labels must lie in [0, {k})")
    labels = labels.astype(np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_z[:, None]
    loss = -float(log_probs[np.arange(n), labels].mean())
    dlogits = np.exp(log_probs)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


@dataclass
class ForwardCache:
    mode: Mode
    token: int
    logits: np.ndarray
    layer_caches: list = field(repr=False)
    consumed: bool = False


class Network:
    """Ordered stack of layers ending in logits; loss is softmax cross-entropy."""

    def __init__(self, layers: list[Layer], preprocess=None):
        self.layers = list(layers)
        # optional data.Standardizer stored with checkpoints so eval sees training-time scaling
        self.preprocess = preprocess
        self._token = 0

    def __len__(self):
        return len(self.layers)

    def named(self, which: str = "state") -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in getattr(layer, which)().items():
                out[f"{i}.{name}"] = arr
        return out

    def params(self) -> dict[str, np.ndarray]:
        return self.named("params")

    def state(self) -> dict[str, np.ndarray]:
        return self.named("state")

    def decayed(self) -> set[str]:
        """Parameter names that take l2 weight decay (weights and filters, not biases or BN)."""
        return {k for k in self.params() if k.endswith(".W") or k.endswith(".filters")}

    def batchnorms(self) -> list[BatchNorm]:
        return [l for l in self.layers if isinstance(l, BatchNorm)]

    def forward(self, x, mode: Mode = Mode.EVAL, rng: RandomSource | None = None):
        x = as_tensor(x)
        self._token += 1
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x, mode, rng)
            caches.append(c if mode is Mode.TRAIN else None)
        return x, ForwardCache(mode, self._token, x, caches)

    def backward(self, cache: ForwardCache, labels) -> tuple[float, dict[str, np.ndarray]]:
        """Loss and gradients for every parameter, from the most recent TRAIN forward."""
        loss, grads, _ = self.backward_with_input(cache, labels)
        return loss, grads

    def backward_with_input(self, cache: ForwardCache, labels):
        """Like :meth:`backward`, also returning the gradient with respect to the input."""
        if cache.mode is not Mode.TRAIN:
            raise ContractError(f"backward needs a TRAIN-mode forward, got {cache.mode.value}")
        if cache.consumed or cache.token != self._token:
            raise ContractError("stale forward cache: run forward again before backward")
        cache.consumed = True
        loss, dy = softmax_cross_entropy(cache.logits, labels)
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            dy, g = self.layers[i].backward(dy, cache.layer_caches[i])
            for name, arr in g.items():
                grads[f"{i}.{name}"] = arr
        return loss, grads, dy

    def predict(self, x) -> np.ndarray:
        return self.forward(x, Mode.EVAL)[0]


def forward(net: Network, x, mode: Mode = Mode.EVAL, rng: RandomSource | None = None):
    return net.forward(x, mode, rng)


def backward(net: Network, cache: ForwardCache, labels):
    return net.backward(cache, labels)
