"""Weight construction for dense matrices and conv filters.

Dense weights have shape ``(n_in, n_out)``; column ``j`` holds the incoming
weights of output unit ``j``. Conv filters have shape
``(k_h, k_w, c_in, c_out)`` and are treated as a ``(fan_in, c_out)`` matrix
when normalizing.

Corrections (``a = E[f(z_prev)^2]``, ``b = E[f'(z)^2]``, keep prob ``p``)::

    forward            1 / sqrt(a / p)
    backward           1 / sqrt(p * b)
    forward_backward   1 / sqrt(a / p + p * b)
    generalized_xavier sqrt(3) / sqrt(n_in * a / p + p * n_out * b)   (on Unif[-1, 1])
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .activations import IDENTITY, ActivationKind, factors_or_default
from .core import RandomSource

BASES = ("hypersphere", "orthonormal", "uniform", "gaussian_he", "gaussian_xavier")
CORRECTIONS = ("none", "forward", "backward", "forward_backward", "generalized_xavier")
BASELINE_BASES = ("gaussian_he", "gaussian_xavier")


class InvalidSpecError(ValueError):
    pass


@dataclass(frozen=True)
class InitializerSpec:
    base: str
    correction: str
    keep_prob: float = 1.0
    activation_in: ActivationKind | None = IDENTITY
    activation_out: ActivationKind | None = IDENTITY
    factor_method: str = "analytic"

    def __post_init__(self):
        if self.base not in BASES:
            raise InvalidSpecError(f"unknown base {self.base!r}")
        if self.correction not in CORRECTIONS:
            raise InvalidSpecError(f"unknown correction {self.correction!r}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise InvalidSpecError(f"keep_prob must lie in (0, 1], got {self.keep_prob}")
        if self.correction == "none" and self.base not in BASELINE_BASES:
            raise InvalidSpecError(f"base {self.base!r} needs a correction")
        if (self.correction == "generalized_xavier") != (self.base == "uniform"):
            raise InvalidSpecError("generalized_xavier pairs with the uniform base only")

    def for_layer(self, keep_prob: float, activation_in, activation_out) -> "InitializerSpec":
        return replace(self, keep_prob=keep_prob, activation_in=activation_in,
                       activation_out=activation_out)


# names accepted in config files and on the command line
NAMED = {
    "hypersphere_fwd": ("hypersphere", "forward"),
    "hypersphere_bwd": ("hypersphere", "backward"),
    "hypersphere_fwdbwd": ("hypersphere", "forward_backward"),
    "orthonormal_bwd": ("orthonormal", "backward"),
    "orthonormal_fwdbwd": ("orthonormal", "forward_backward"),
    "generalized_xavier": ("uniform", "generalized_xavier"),
    "xavier": ("gaussian_xavier", "none"),
    "he": ("gaussian_he", "none"),
}


def named_spec(name: str, keep_prob: float = 1.0, activation_in=IDENTITY,
               activation_out=IDENTITY) -> InitializerSpec:
    try:
        base, correction = NAMED[name]
    except KeyError:
        raise InvalidSpecError(f"unknown initializer {name!r}; expected one of {sorted(NAMED)}")
    return InitializerSpec(base, correction, keep_prob, activation_in, activation_out)


def unit_hypersphere_matrix(rng: RandomSource, n_in: int, n_out: int) -> np.ndarray:
    """Gaussian matrix with every column scaled to unit l2 norm."""
    if n_in < 1 or n_out < 1:
        raise ValueError("dimensions must be positive")
    w = rng.standard_normal((n_in, n_out))
    norms = np.linalg.norm(w, axis=0)
    while np.any(norms == 0.0):
        bad = norms == 0.0
        w[:, bad] = rng.standard_normal((n_in, int(bad.sum())))
        norms = np.linalg.norm(w, axis=0)
    return w / norms


def orthonormal_matrix(rng: RandomSource, n: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian matrix with diag(R) > 0."""
    if n < 1:
        raise ValueError("n must be positive")
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def rectangular_orthonormal(rng: RandomSource, n_in: int, n_out: int) -> np.ndarray:
    """Top-left ``n_in x n_out`` block of an orthogonal matrix of size max(n_in, n_out).

    Columns are orthonormal when ``n_in >= n_out``; otherwise the rows are.
    """
    q = orthonormal_matrix(rng, max(n_in, n_out))
    return q[:n_in, :n_out].copy()


def corrective_scale(spec: InitializerSpec, n_in: int, n_out: int) -> float:
    if spec.correction == "none":
        return 1.0
    a = factors_or_default(spec.activation_in, spec.factor_method).forward
    b = factors_or_default(spec.activation_out, spec.factor_method).backward
    p = spec.keep_prob
    if spec.correction == "forward":
        denom = a / p
    elif spec.correction == "backward":
        denom = p * b
    elif spec.correction == "forward_backward":
        denom = a / p + p * b
    else:
        denom = (n_in / p) * a + p * n_out * b
    if denom <= 0.0:
        raise InvalidSpecError(f"corrective scale undefined: denominator {denom} for {spec}")
    if spec.correction == "generalized_xavier":
        return math.sqrt(3.0) / math.sqrt(denom)
    return 1.0 / math.sqrt(denom)


def _base_matrix(base: str, rng: RandomSource, n_in: int, n_out: int) -> np.ndarray:
    if base == "hypersphere":
        return unit_hypersphere_matrix(rng, n_in, n_out)
    if base == "orthonormal":
        return rectangular_orthonormal(rng, n_in, n_out)
    if base == "uniform":
        return rng.uniform(-1.0, 1.0, (n_in, n_out))
    if base == "gaussian_he":
        return rng.standard_normal((n_in, n_out)) * math.sqrt(2.0 / n_in)
    return rng.standard_normal((n_in, n_out)) * math.sqrt(2.0 / (n_in + n_out))


def build_dense_weights(spec: InitializerSpec, rng: RandomSource, n_in: int, n_out: int) -> np.ndarray:
    scale = corrective_scale(spec, n_in, n_out)
    return _base_matrix(spec.base, rng, n_in, n_out) * scale


def build_conv_filters(spec: InitializerSpec, rng: RandomSource, k_h: int, k_w: int,
                       c_in: int, c_out: int) -> np.ndarray:
    if spec.correction not in ("none", "forward"):
        raise InvalidSpecError(
            f"conv filters support only 'none' or 'forward' corrections, got {spec.correction!r}")
    fan_in = k_h * k_w * c_in
    if spec.base == "gaussian_xavier":
        # Xavier fan-out for a filter bank counts every output position a weight touches
        std = math.sqrt(2.0 / (fan_in + k_h * k_w * c_out))
        flat = rng.standard_normal((fan_in, c_out)) * std
    else:
        flat = _base_matrix(spec.base, rng, fan_in, c_out)
    flat = flat * corrective_scale(spec, fan_in, c_out)
    return flat.reshape(k_h, k_w, c_in, c_out)
