"""Lagrangian core shared by every dual solver.

All duals enter the Lagrangian through ``α`` and four per-layer aggregates of
the ``β`` multipliers (hidden layers ``k = 1..n-1``):

* ``mass[k]``  total multiplier per neuron,
* ``back[k]``  masked back-projection onto layer ``k-1``,
* ``s3[k]``    lower-corner constants,
* ``s4[k]``    upper-corner constants.

With these the Lagrangian is affine in the primals:
``L = const - Σ f_k·x_k - Σ g_k·z_k`` over the boxes ``x_k ∈ [l_k, u_k]``,
``z_k ∈ [0, 1]`` and ``x_0`` in the input box.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Aggregates:
    mass: list
    back: list
    s3: list
    s4: list

    def entries(self) -> int:
        return sum(a.size for part in (self.mass, self.back, self.s3, self.s4) for a in part if a is not None)

    def combine(self, other: "Aggregates", gamma: float) -> "Aggregates":
        """``(1 - γ) self + γ other``."""
        def mix(a, b):
            return [None if x is None else (1.0 - gamma) * x + gamma * y for x, y in zip(a, b)]
        return Aggregates(mix(self.mass, other.mass), mix(self.back, other.back),
                          mix(self.s3, other.s3), mix(self.s4, other.s4))

    def copy(self) -> "Aggregates":
        def cp(a):
            return [None if x is None else x.copy() for x in a]
        return Aggregates(cp(self.mass), cp(self.back), cp(self.s3), cp(self.s4))


def bigm_aggregates(net, bounds, beta0, beta1) -> Aggregates:
    n = net.n_layers
    mass, back, s3, s4 = [None] * n, [None] * n, [None] * n, [None] * n
    for k in range(1, n):
        layer = net.layers[k - 1]
        b = layer.bias_flat
        mass[k] = beta0[k] + beta1[k]
        back[k] = layer.backward(beta1[k])
        s3[k] = beta1[k] * (bounds.pre_lower[k] - b)
        s4[k] = beta0[k] * (bounds.pre_upper[k] - b)
    return Aggregates(mass, back, s3, s4)


def coefficients(net, alpha, agg: Aggregates):
    """Primal coefficients ``f_0..f_{n-1}``, ``g_1..g_{n-1}`` (``g[0]`` is None) and the constant."""
    n = net.n_layers
    f, g = [None] * n, [None] * n
    const = float(net.layers[-1].bias_flat[0])
    for k in range(n):
        nxt = net.layers[k]
        if k + 1 < n:
            fk = -nxt.backward(alpha[k + 1]) + agg.back[k + 1]
        else:
            fk = -nxt.backward(np.ones(1))
        if k >= 1:
            b = net.layers[k - 1].bias_flat
            fk = fk + alpha[k] - agg.mass[k]
            g[k] = agg.s3[k] + agg.s4[k] + b * agg.mass[k]
            const += float(b @ alpha[k]) + float(agg.s3[k].sum())
        f[k] = fk
    return f, g, const


def minimise(bounds, f, g, const):
    """Closed-form minimiser over the boxes; ties go to the upper end."""
    n = len(f)
    x, z = [None] * n, [None] * n
    value = const
    for k in range(n):
        x[k] = np.where(f[k] >= 0, bounds.post_upper(k), bounds.post_lower(k))
        value -= float(f[k] @ x[k])
        if k >= 1:
            z[k] = (g[k] >= 0).astype(np.float64)
            value -= float(g[k] @ z[k])
    return x, z, value


def evaluate(f, g, const, x, z) -> float:
    """Lagrangian value at an arbitrary primal point."""
    value = const
    for k in range(len(f)):
        value -= float(f[k] @ x[k])
        if k >= 1:
            value -= float(g[k] @ z[k])
    return value


def inner_min(net, bounds, alpha, agg: Aggregates):
    f, g, const = coefficients(net, alpha, agg)
    return minimise(bounds, f, g, const)


def check_scalar_output(net, bounds):
    if net.output_size != 1:
        raise ValueError("bounding needs a scalar output; use Network.select_output or with_objective")
    if bounds.n_layers < net.n_layers - 1:
        raise ValueError(f"bounds cover {bounds.n_layers} layers, network needs {net.n_layers - 1}")
