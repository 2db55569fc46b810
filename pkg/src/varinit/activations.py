"""Pointwise nonlinearities and their Gaussian adjustment factors.

An adjustment factor pair is ``(E[f(z)^2], E[f'(z)^2])`` for ``z ~ N(0, 1)``.
The first term corrects a layer's weights for how much the incoming
nonlinearity compresses variance on the way forward, the second for how much
its derivative shrinks error signals on the way back.

Non-differentiable points take the left derivative: ReLU'(0) = 0 and
ELU'(0) = alpha.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .core import DTYPE, RandomSource, as_tensor

KINDS = ("identity", "relu", "tanh", "elu", "gelu")
METHODS = ("analytic", "quadrature", "mc")

QUADRATURE_NODES = 96
MC_SAMPLES = 10_000_000
MC_SEED = 20170424


@dataclass(frozen=True)
class ActivationKind:
    name: str
    alpha: float = 1.0  # ELU only
    mu: float = 0.0  # GELU only
    sigma: float = 1.0  # GELU only

    def __post_init__(self):
        if self.name not in KINDS:
            raise ValueError(f"unknown activation {self.name!r}; expected one of {KINDS}")
        if self.name == "elu" and not self.alpha > 0:
            raise ValueError("ELU alpha must be positive")
        if self.name == "gelu" and not self.sigma > 0:
            raise ValueError("GELU sigma must be positive")

    @property
    def label(self) -> str:
        if self.name == "elu":
            return f"elu(alpha={self.alpha:g})"
        if self.name == "gelu":
            return f"gelu(mu={self.mu:g},sigma={self.sigma:g})"
        return self.name

    @property
    def kinks(self) -> tuple[float, ...]:
        """Points where f or f' is not smooth."""
        return (0.0,) if self.name in ("relu", "elu") else ()


IDENTITY = ActivationKind("identity")
RELU = ActivationKind("relu")
TANH = ActivationKind("tanh")
ELU = ActivationKind("elu", alpha=1.0)
GELU = ActivationKind("gelu", mu=0.0, sigma=1.0)


def parse_activation(text: str) -> ActivationKind:
    """Parse ``relu``, ``elu``, ``elu:0.5``, ``gelu``, ``gelu:0:1`` and friends."""
    name, *args = text.strip().lower().split(":")
    vals = [float(a) for a in args]
    if name == "elu":
        return ActivationKind("elu", alpha=vals[0] if vals else 1.0)
    if name == "gelu":
        mu = vals[0] if vals else 0.0
        sigma = vals[1] if len(vals) > 1 else 1.0
        return ActivationKind("gelu", mu=mu, sigma=sigma)
    if vals:
        raise ValueError(f"activation {name!r} takes no parameters")
    return ActivationKind(name)


def _phi(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def apply(f: ActivationKind, x) -> np.ndarray:
    x = as_tensor(x)
    if f.name == "identity":
        return x.copy()
    if f.name == "relu":
        return np.maximum(x, 0.0)
    if f.name == "tanh":
        return np.tanh(x)
    if f.name == "elu":
        return np.where(x > 0, x, f.alpha * np.expm1(np.minimum(x, 0.0)))
    # GELU: x * Phi((x - mu) / sigma); ndtr is the normal CDF via erfc, double precision
    return x * ndtr((x - f.mu) / f.sigma)


def derivative(f: ActivationKind, x) -> np.ndarray:
    x = as_tensor(x)
    if f.name == "identity":
        return np.ones_like(x)
    if f.name == "relu":
        return (x > 0).astype(DTYPE)
    if f.name == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if f.name == "elu":
        return np.where(x > 0, 1.0, f.alpha * np.exp(np.minimum(x, 0.0)))
    u = (x - f.mu) / f.sigma
    return ndtr(u) + x * _phi(u) / f.sigma


@dataclass(frozen=True)
class AdjustmentFactors:
    forward: float
    backward: float
    source: str  # "analytic" | "quadrature" | "mc" | "default"
    fallback: bool = False  # True when an analytic request was answered by quadrature

    def __post_init__(self):
        if self.forward < 0 or self.backward < 0:
            raise ValueError("adjustment factors must be nonnegative")


DEFAULT_FACTORS = AdjustmentFactors(0.5, 0.5, "default")


@functools.lru_cache(maxsize=None)
def half_range_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule for the weight exp(-z^2/2) on [0, inf).

    Recurrence coefficients come from the discretized Stieltjes procedure over
    a 4000-point Gauss-Legendre grid on [0, 20] (the tail beyond 20 is below
    1e-80); nodes and weights then follow from the Jacobi matrix.
    """
    x, w = np.polynomial.legendre.leggauss(4000)
    x = 10.0 * (x + 1.0)
    w = 10.0 * w * np.exp(-0.5 * x * x)
    alpha = np.zeros(n)
    beta = np.zeros(n)
    p_prev = np.zeros_like(x)
    p_cur = np.ones_like(x)
    norm_prev = 1.0
    for k in range(n):
        norm = w @ (p_cur * p_cur)
        alpha[k] = (w @ (x * p_cur * p_cur)) / norm
        beta[k] = w.sum() if k == 0 else norm / norm_prev
        p_prev, p_cur = p_cur, (x - alpha[k]) * p_cur - (beta[k] if k else 0.0) * p_prev
        norm_prev = norm
        # rescale to keep the recurrence in range; ratios are unaffected
        scale = math.sqrt(w @ (p_cur * p_cur))
        p_cur, p_prev, norm_prev = p_cur / scale, p_prev / scale, norm_prev / scale**2
    jacobi = np.diag(alpha) + np.diag(np.sqrt(beta[1:]), 1) + np.diag(np.sqrt(beta[1:]), -1)
    nodes, vecs = np.linalg.eigh(jacobi)
    weights = beta[0] * vecs[0] ** 2
    return nodes, weights


def _gaussian_expectation(fn, kinks: tuple[float, ...], n: int) -> float:
    """E[fn(z)] for z ~ N(0,1) by Gauss-Hermite quadrature.

    A kink at 0 ruins the polynomial accuracy of the full-line rule, so kinked
    integrands are split there and each half is integrated with the
    half-range Hermite rule.
    """
    if not kinks:
        nodes, weights = np.polynomial.hermite_e.hermegauss(n)
        return float(weights @ fn(nodes) / math.sqrt(2.0 * math.pi))
    if kinks != (0.0,):
        raise NotImplementedError("only kinks at 0 are supported")
    z, w = half_range_hermite(n)
    return float((w @ fn(z) + w @ fn(-z)) / math.sqrt(2.0 * math.pi))


def _quadrature(f: ActivationKind, n: int) -> tuple[float, float]:
    fwd = _gaussian_expectation(lambda z: apply(f, z) ** 2, f.kinks, n)
    bwd = _gaussian_expectation(lambda z: derivative(f, z) ** 2, f.kinks, n)
    return fwd, bwd


def _monte_carlo(f: ActivationKind, samples: int, seed: int) -> tuple[float, float]:
    rng = RandomSource(seed)
    chunk = 1_000_000
    fwd = bwd = 0.0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        z = rng.standard_normal(m)
        fwd += float(np.sum(apply(f, z) ** 2))
        bwd += float(np.sum(derivative(f, z) ** 2))
        done += m
    return fwd / samples, bwd / samples


def _analytic(f: ActivationKind) -> tuple[float, float] | None:
    if f.name == "identity":
        return 1.0, 1.0
    if f.name == "relu":
        return 0.5, 0.5
    if f.name == "elu":
        a2 = f.alpha * f.alpha
        # E[e^{kz}; z<0] = e^{k^2/2} Phi(-k)
        e2 = math.exp(2.0) * float(ndtr(-2.0))
        e1 = math.exp(0.5) * float(ndtr(-1.0))
        return 0.5 + a2 * (e2 - 2.0 * e1 + 0.5), 0.5 + a2 * e2
    return None


@functools.lru_cache(maxsize=None)
def adjustment_factors(
    f: ActivationKind,
    method: str = "analytic",
    nodes: int = QUADRATURE_NODES,
    samples: int = MC_SAMPLES,
    seed: int = MC_SEED,
) -> AdjustmentFactors:
    """Return ``(E[f(z)^2], E[f'(z)^2])`` for ``z ~ N(0,1)``; cached per argument set."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "analytic":
        exact = _analytic(f)
        if exact is not None:
            return AdjustmentFactors(*exact, source="analytic")
        warnings.warn(f"no closed form for {f.label}; using quadrature", stacklevel=2)
        return AdjustmentFactors(*_quadrature(f, nodes), source="quadrature", fallback=True)
    if method == "quadrature":
        if nodes < 64:
            raise ValueError("quadrature needs at least 64 nodes")
        return AdjustmentFactors(*_quadrature(f, nodes), source="quadrature")
    if samples < 10_000_000:
        raise ValueError("Monte Carlo needs at least 1e7 samples")
    return AdjustmentFactors(*_monte_carlo(f, samples, seed), source="mc")


def factors_or_default(f: ActivationKind | None, method: str = "analytic") -> AdjustmentFactors:
    """Factors for ``f``; the 0.5/0.5 default when the nonlinearity is unknown (``None``)."""
    if f is None:
        return DEFAULT_FACTORS
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return adjustment_factors(f, method)
