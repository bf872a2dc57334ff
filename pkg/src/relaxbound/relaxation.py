"""Intermediate bounds and the constraint machinery of the Big-M and Anderson relaxations.

Bounds are kept as lists indexed by layer: entry 0 is the input box, entry
``k >= 1`` describes the pre-activation ``x̂_k = W_k x_{k-1} + b_k`` and its
rectified post-activation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .network import FORMAT_VERSION, InputDomain, Layer, Linear, Network, ShapeError

log = logging.getLogger(__name__)


@dataclass
class LayerBounds:
    """Per-layer interval bounds; index 0 holds the input box."""

    pre_lower: list
    pre_upper: list

    def __post_init__(self):
        if len(self.pre_lower) != len(self.pre_upper):
            raise ShapeError("lower and upper bound lists differ in length")
        self.pre_lower = [np.asarray(v, dtype=np.float64) for v in self.pre_lower]
        self.pre_upper = [np.asarray(v, dtype=np.float64) for v in self.pre_upper]

    @property
    def n_layers(self) -> int:
        """Number of affine layers covered (entry 0 is the input)."""
        return len(self.pre_lower) - 1

    def post_lower(self, k):
        return self.pre_lower[0] if k == 0 else np.maximum(self.pre_lower[k], 0.0)

    def post_upper(self, k):
        return self.pre_upper[0] if k == 0 else np.maximum(self.pre_upper[k], 0.0)

    @property
    def input_lower(self):
        return self.pre_lower[0]

    @property
    def input_upper(self):
        return self.pre_upper[0]

    def copy(self) -> "LayerBounds":
        return LayerBounds([v.copy() for v in self.pre_lower], [v.copy() for v in self.pre_upper])

    def truncated(self, n_layers: int) -> "LayerBounds":
        return LayerBounds(self.pre_lower[:n_layers + 1], self.pre_upper[:n_layers + 1])

    def tightest(self, other: "LayerBounds") -> "LayerBounds":
        """Elementwise intersection of two sound bound sets."""
        return LayerBounds([np.maximum(a, b) for a, b in zip(self.pre_lower, other.pre_lower)],
                           [np.minimum(a, b) for a, b in zip(self.pre_upper, other.pre_upper)])

    def is_consistent(self, tol=1e-9) -> bool:
        return all(np.all(lo <= hi + tol) for lo, hi in zip(self.pre_lower, self.pre_upper))

    def to_json(self) -> dict:
        layers = []
        for k, (lo, hi) in enumerate(zip(self.pre_lower, self.pre_upper)):
            layers.append({"layer": k, "pre_lower": lo.tolist(), "pre_upper": hi.tolist(),
                           "post_lower": self.post_lower(k).tolist(),
                           "post_upper": self.post_upper(k).tolist()})
        return {"format_version": FORMAT_VERSION, "layers": layers}

    @classmethod
    def from_json(cls, data: dict) -> "LayerBounds":
        rows = sorted(data["layers"], key=lambda r: r["layer"])
        if [r["layer"] for r in rows] != list(range(len(rows))):
            raise ValueError("bounds file must list layers 0..n without gaps")
        return cls([r["pre_lower"] for r in rows], [r["pre_upper"] for r in rows])


def interval_propagate(net: Network, domain: Union[InputDomain, LayerBounds]) -> LayerBounds:
    """Interval arithmetic through every affine layer and ReLU."""
    if isinstance(domain, LayerBounds):
        lo, hi = domain.input_lower, domain.input_upper
    else:
        lo, hi = domain.lower, domain.upper
    if lo.size != net.input_size:
        raise ShapeError(f"domain has {lo.size} entries, network expects {net.input_size}")
    pre_l, pre_u = [lo], [hi]
    for k, layer in enumerate(net.layers, start=1):
        l, u = _affine_interval(layer, lo, hi)
        pre_l.append(l)
        pre_u.append(u)
        lo, hi = np.maximum(l, 0.0), np.maximum(u, 0.0)
    return LayerBounds(pre_l, pre_u)


def _affine_interval(layer: Layer, lo, hi):
    mid, rad = 0.5 * (lo + hi), 0.5 * (hi - lo)
    c = layer.forward(mid)
    r = layer.absolute().linear(rad)
    return c - r, c + r


def propagate_from(net: Network, bounds: LayerBounds, start: int) -> LayerBounds:
    """Recompute interval bounds of layers ``> start`` from the (fixed) bounds of layer ``start``.

    The result is intersected with ``bounds``, so it is never looser.
    """
    out = bounds.copy()
    for k in range(start + 1, net.n_layers + 1):
        l, u = _affine_interval(net.layers[k - 1], out.post_lower(k - 1), out.post_upper(k - 1))
        out.pre_lower[k] = np.maximum(out.pre_lower[k], l)
        out.pre_upper[k] = np.minimum(out.pre_upper[k], u)
    return out


# -- refinement ------------------------------------------------------------

@dataclass(frozen=True)
class IntervalOnly:
    """Intermediate bounds from interval propagation alone."""


@dataclass(frozen=True)
class BigMDual:
    """Refine each neuron's bounds with a short Big-M dual run on the truncated network."""

    iters: int = 100
    lr_start: float = 1e-2
    lr_end: float = 1e-4


def intermediate_bounds(net: Network, domain: Union[InputDomain, LayerBounds],
                        refine: Union[IntervalOnly, BigMDual, None] = None) -> LayerBounds:
    """Bounds for every layer of ``net``, refined layer by layer.

    Each neuron of layer ``k >= 2`` gets the tighter of its interval bound and a
    dual bound computed on the sub-network ending at that neuron, using the
    already-refined bounds of earlier layers.
    """
    bounds = interval_propagate(net, domain)
    if refine is None or isinstance(refine, IntervalOnly):
        return bounds
    if not isinstance(refine, BigMDual):
        raise TypeError(f"unknown refinement {refine!r}")
    from .bigm import bigm_solve
    from .optim import LinearSchedule

    schedule = LinearSchedule(refine.lr_start, refine.lr_end)
    # the first layer is exact for a box domain
    for k in range(2, net.n_layers + 1):
        size = net.layers[k - 1].out_size
        lo, hi = bounds.pre_lower[k].copy(), bounds.pre_upper[k].copy()
        sub_bounds = bounds.truncated(k - 1)
        for j in range(size):
            low = bigm_solve(net.truncated(k, j, 1.0), sub_bounds, refine.iters, schedule).bound
            up = -bigm_solve(net.truncated(k, j, -1.0), sub_bounds, refine.iters, schedule).bound
            lo[j] = max(lo[j], low)
            hi[j] = min(hi[j], up)
        bounds.pre_lower[k], bounds.pre_upper[k] = lo, hi
        # later layers benefit from the tighter box through interval arithmetic as well
        bounds = propagate_from(net, bounds, k)
        log.debug("refined layer %d: lower %s upper %s", k, lo, hi)
    return bounds


def refine_bounds(net, domain, iters=100) -> LayerBounds:
    return intermediate_bounds(net, domain, BigMDual(iters))


# -- Anderson constraint machinery ------------------------------------------

@dataclass(frozen=True, eq=False)
class CheckMatrices:
    """Sign-selected corners of the previous layer's box, in mask shape."""

    L_check: np.ndarray
    U_check: np.ndarray


def _as_layer(W, b=None) -> Layer:
    if isinstance(W, (Linear,)) or hasattr(W, "mask_shape"):
        return W
    W = np.asarray(W, dtype=np.float64)
    return Linear(W, np.zeros(W.shape[0]) if b is None else b)


def check_matrices(W, l_prev, u_prev) -> CheckMatrices:
    """``Ľ`` takes the lower bound where the weight is non-negative and the upper bound otherwise; ``Ǔ`` the opposite."""
    layer = _as_layer(W)
    wexp = layer.expanded_weight()
    gl = layer.gather(np.asarray(l_prev, dtype=np.float64))
    gu = layer.gather(np.asarray(u_prev, dtype=np.float64))
    pos = wexp >= 0
    return CheckMatrices(np.where(pos, gl, gu), np.where(pos, gu, gl))


def anderson_terms(layer: Layer, checks: CheckMatrices, mask):
    """Per-neuron constants ``((W⊙I⊙Ľ)·1, (W⊙(1-I)⊙Ǔ)·1)`` of a mask's constraint."""
    wexp = layer.expanded_weight()
    lc = layer.reduce(wexp * mask * checks.L_check)
    uc = layer.reduce(wexp * ~np.asarray(mask, dtype=bool) * checks.U_check)
    return lc, uc


def anderson_violation(W, b, checks: CheckMatrices, mask, x_prev, x, z) -> np.ndarray:
    """Residual ``x - rhs`` of a mask's upper-bound constraint (positive means violated)."""
    from .network import masked_forward
    layer = _as_layer(W, b)
    bias = layer.bias_flat if b is None else np.asarray(b, dtype=np.float64)
    lc, uc = anderson_terms(layer, checks, mask)
    rhs = masked_forward(layer, mask, x_prev) + z * bias - lc * (1.0 - z) + uc * z
    return x - rhs


def bigm_violation(W, b, pre_lower, pre_upper, x_prev, x, z):
    """Residuals of the two Big-M upper constraints: ``x ≤ û z`` and ``x ≤ x̂ - l̂(1-z)``."""
    layer = _as_layer(W, b)
    bias = layer.bias_flat if b is None else np.asarray(b, dtype=np.float64)
    v0 = x - z * pre_upper
    v1 = x - (layer.linear(x_prev) + bias) + (1.0 - z) * pre_lower
    return v0, v1


def oracle_most_violated(W, b, checks: CheckMatrices, x_prev, x, z) -> np.ndarray:
    """Mask of the most violated exponential-family constraint at ``(x_prev, x, z)``.

    Entry ``(i, j)`` is on when ``((1-z_i) Ľ_ij + z_i Ǔ_ij - x_prev_j) W_ij ≥ 0``.
    ``b`` and ``x`` do not influence the argmax; they are accepted for symmetry
    with :func:`anderson_violation`.
    """
    layer = _as_layer(W, b)
    zs = layer.spread(np.asarray(z, dtype=np.float64))
    coeff = ((1.0 - zs) * checks.L_check + zs * checks.U_check - layer.gather(np.asarray(x_prev, float)))
    return coeff * layer.expanded_weight() >= 0
