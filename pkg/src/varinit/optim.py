"""SGD, Nesterov momentum and Adam over a dict of named parameter arrays.

Parameters are updated in place. l2 decay adds ``weight_decay * param`` to
the gradient of every name in ``decay`` before the update rule runs.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np


class DivergenceError(FloatingPointError):
    pass


@dataclass
class Optimizer:
    kind: str = "adam"  # "sgd" | "nesterov" | "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    decay: set[str] | None = None  # names taking l2 decay; None means all
    step_count: int = 0
    slots: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "nesterov", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")

    def reset_slots(self):
        """Zero the momentum / moment buffers (keeps the step counter)."""
        self.slots.clear()

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient for parameter {name!r} "
                                      f"(step {self.step_count + 1})")
            if g.shape != params[name].shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
        self.step_count += 1
        t = self.step_count
        for name, g in grads.items():
            p = params[name]
            if self.weight_decay and (self.decay is None or name in self.decay):
                g = g + self.weight_decay * p
            slot = self.slots.setdefault(name, {})
            if self.kind == "sgd":
                p -= lr * g
            elif self.kind == "nesterov":
                v = slot.setdefault("v", np.zeros_like(p))
                v *= self.momentum
                v -= lr * g
                p += self.momentum * v - lr * g
            else:
                m = slot.setdefault("m", np.zeros_like(p))
                v = slot.setdefault("v", np.zeros_like(p))
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                m_hat = m / (1.0 - self.beta1 ** t)
                v_hat = v / (1.0 - self.beta2 ** t)
                p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def step(state: Optimizer, params, grads, lr: float) -> Optimizer:
    state.step(params, grads, lr)
    return state


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    decay_factor: float = 0.1
    milestones: tuple[int, ...] = ()

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0.0 < self.decay_factor < 1.0:
            raise ValueError("decay_factor must lie in (0, 1)")
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError("milestones must be strictly increasing")

    def lr_at(self, epoch: int) -> float:
        passed = bisect.bisect_right(self.milestones, epoch)
        return self.base_lr * self.decay_factor ** passed


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    return schedule.lr_at(epoch)
