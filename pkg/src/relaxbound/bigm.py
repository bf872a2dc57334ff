"""Supergradient ascent on the dual of the Big-M relaxation.

The Big-M dual is the Anderson dual with no exponential-family multiplier
active, so this solver doubles as the initialiser of the tighter methods.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _lagrangian as core
from .base import SolveResult
from .optim import Adam, LinearSchedule


@dataclass
class BigMDualState:
    """``α``, ``β_0`` and ``β_1`` per hidden layer; index 0 is unused (None)."""

    alpha: list
    beta0: list
    beta1: list

    def copy(self) -> "BigMDualState":
        def cp(a):
            return [None if v is None else v.copy() for v in a]
        return BigMDualState(cp(self.alpha), cp(self.beta0), cp(self.beta1))

    def entries(self) -> int:
        return sum(v.size for part in (self.alpha, self.beta0, self.beta1) for v in part if v is not None)

    def check(self, net):
        n = net.n_layers
        if not (len(self.alpha) == len(self.beta0) == len(self.beta1) == n):
            raise ValueError(f"dual state covers {len(self.alpha)} layers, network has {n}")
        for k in range(1, n):
            size = net.layers[k - 1].out_size
            for name in ("alpha", "beta0", "beta1"):
                v = getattr(self, name)[k]
                if v is None or v.shape != (size,):
                    raise ValueError(f"{name}[{k}] should have shape ({size},)")


def bigm_init(net, bounds=None) -> BigMDualState:
    """All-zero duals, whose dual value is the last-layer interval bound."""
    n = net.n_layers
    zeros = [None] + [np.zeros(net.layers[k - 1].out_size) for k in range(1, n)]
    return BigMDualState(zeros, [None if v is None else v.copy() for v in zeros],
                         [None if v is None else v.copy() for v in zeros])


def bigm_aggregates(state: BigMDualState, net, bounds):
    return core.bigm_aggregates(net, bounds, state.beta0, state.beta1)


def bigm_inner_min(state: BigMDualState, net, bounds):
    """Primal minimiser ``(x*, z*)`` of the Lagrangian and the dual value ``d``."""
    state.check(net)
    core.check_scalar_output(net, bounds)
    return core.inner_min(net, bounds, state.alpha, bigm_aggregates(state, net, bounds))


def bigm_supergradient(state: BigMDualState, x_star, z_star, net, bounds=None):
    """Constraint residuals at the minimiser, keyed like the state."""
    n = net.n_layers
    grads = {}
    for k in range(1, n):
        layer = net.layers[k - 1]
        pre = layer.forward(x_star[k - 1])
        x, z = x_star[k], z_star[k]
        grads[("alpha", k)] = pre - x
        if bounds is None:
            raise ValueError("bounds are needed for the β gradients")
        grads[("beta0", k)] = x - z * bounds.pre_upper[k]
        grads[("beta1", k)] = x - pre + (1.0 - z) * bounds.pre_lower[k]
    return grads


def bigm_step(state: BigMDualState, grads, adam: Adam, lr: float) -> BigMDualState:
    n = len(state.alpha)
    new = BigMDualState([None] * n, [None] * n, [None] * n)
    for k in range(1, n):
        new.alpha[k] = adam.ascend(("alpha", k), state.alpha[k], grads[("alpha", k)], lr)
        new.beta0[k] = adam.ascend(("beta0", k), state.beta0[k], grads[("beta0", k)], lr)
        new.beta1[k] = adam.ascend(("beta1", k), state.beta1[k], grads[("beta1", k)], lr)
    return new


def bigm_solve(net, bounds, iters: int = 1000, schedule: Optional[LinearSchedule] = None,
               init_state: Optional[BigMDualState] = None, adam: Optional[Adam] = None) -> SolveResult:
    """Projected Adam ascent for ``iters`` steps; reports the best dual value seen.

    ``iters=0`` evaluates the initial duals only.
    """
    if iters < 0:
        raise ValueError("iters must be non-negative")
    schedule = schedule or LinearSchedule(1e-2, 1e-4)
    adam = adam or Adam()
    state = init_state.copy() if init_state is not None else bigm_init(net, bounds)
    state.check(net)
    core.check_scalar_output(net, bounds)
    history, sizes = [], []
    best = -np.inf
    for t in range(iters + 1):
        x, z, d = core.inner_min(net, bounds, state.alpha, bigm_aggregates(state, net, bounds))
        history.append(d)
        sizes.append(state.entries())
        best = max(best, d)
        if t == iters:
            break
        grads = bigm_supergradient(state, x, z, net, bounds)
        state = bigm_step(state, grads, adam, schedule(t, iters))
    return SolveResult(best, state, x[0], history, iters, sizes)


class BigMSolver:
    """Big-M dual as a :class:`~relaxbound.base.BoundingMethod`."""

    name = "bigm"

    def __init__(self, iters: int = 1000, schedule: Optional[LinearSchedule] = None):
        self.iters = iters
        self.schedule = schedule or LinearSchedule(1e-2, 1e-4)

    def solve(self, net, bounds, warm=None) -> SolveResult:
        return bigm_solve(net, bounds, self.iters, self.schedule, init_state=_bigm_part(warm))


def _bigm_part(warm):
    if warm is None:
        return None
    if isinstance(warm, BigMDualState):
        return warm
    part = getattr(warm, "bigm", None)
    return part if isinstance(part, BigMDualState) else None
