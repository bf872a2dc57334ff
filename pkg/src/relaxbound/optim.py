"""Projected Adam ascent used by the supergradient dual solvers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class LinearSchedule:
    """Step size decaying linearly from ``start`` to ``end`` over a run of ``n`` steps."""

    start: float = 1e-2
    end: float = 1e-4

    def __post_init__(self):
        if not (self.start > 0 and self.end > 0):
            raise ValueError("step sizes must be positive")

    def __call__(self, t: int, n: int) -> float:
        return self.start + (self.end - self.start) * t / max(n - 1, 1)


@dataclass
class Adam:
    """Adam ascent on non-negative variables, one moment pair and step count per key."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    steps: dict = field(default_factory=dict)

    def ascend(self, key, param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        """One ascent step followed by clipping to the non-negative orthant."""
        if key not in self.m:
            self.m[key] = np.zeros_like(param)
            self.v[key] = np.zeros_like(param)
            self.steps[key] = 0
        t = self.steps[key] = self.steps[key] + 1
        m = self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * grad
        v = self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * grad * grad
        mhat = m / (1 - self.beta1 ** t)
        vhat = v / (1 - self.beta2 ** t)
        return np.maximum(param + lr * mhat / (np.sqrt(vhat) + self.eps), 0.0)
