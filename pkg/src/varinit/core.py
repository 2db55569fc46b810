"""Dense float64 arrays and the seeded random source.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every random
draw in the package goes through :class:`RandomSource`, which wraps numpy's
PCG64 bit generator (numpy >= 1.17 stream definition). PCG64 streams are
fixed by numpy's stability policy, so a seed reproduces the same samples
across runs and platforms.

Variance is always the population variance (divide by N), the same
convention Batch Normalization uses during training.
"""

from __future__ import annotations

import numpy as np

DTYPE = np.float64
PRNG_ALGORITHM = "numpy.PCG64"


class ShapeError(ValueError):
    """Raised when array shapes are incompatible."""


class ContractError(RuntimeError):
    """Raised when an operation is called outside its allowed state."""


class DataError(ValueError):
    """Raised for invalid labels, empty datasets and similar input problems."""


class RandomSource:
    """Seeded PCG64 stream. Children derive from ``(seed, key)`` deterministically."""

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.algorithm = PRNG_ALGORITHM
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, key: int) -> "RandomSource":
        # mix the key into the seed through SeedSequence so children never collide
        ss = np.random.SeedSequence([self.seed, int(key)])
        return RandomSource(int(ss.generate_state(1, dtype=np.uint64)[0]))

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=DTYPE)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def bernoulli(self, p: float, shape) -> np.ndarray:
        """0/1 float mask with P(1) = p."""
        return (self._gen.random(shape) < p).astype(DTYPE)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, shape)


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def sample_standard_normal(rng: RandomSource, shape) -> np.ndarray:
    shape = tuple(np.atleast_1d(shape).tolist()) if not isinstance(shape, tuple) else shape
    if len(shape) == 0:
        raise ShapeError("shape must be nonempty")
    return rng.standard_normal(shape)


def variance(x: np.ndarray, axis=None) -> np.ndarray:
    """Population variance along ``axis`` (all entries when ``axis`` is None)."""
    x = as_tensor(x)
    if axis is not None:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in axes:
            if not -x.ndim <= ax < x.ndim:
                raise ShapeError(f"axis {ax} out of range for {x.ndim}-d tensor")
    return np.var(x, axis=axis)


def mean_square(x: np.ndarray) -> float:
    """Second moment about zero; the variance of a signal whose mean is known to be 0."""
    x = as_tensor(x)
    return float(np.mean(x * x))
