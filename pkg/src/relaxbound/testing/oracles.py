"""Independent reference computations.

These work on dense matrices and literal sums so that they share no code path
with the aggregate-based solvers they check.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..network import InputDomain, Network, dense_mask, forward_eval


def all_masks(width: int) -> np.ndarray:
    """Every 0/1 row of ``width`` entries, in binary counting order (entry 0 is the low bit)."""
    return ((np.arange(2 ** width)[:, None] >> np.arange(width)) & 1).astype(np.float64)


def exhaustive_best_mask(W_row, checks_row, x_prev, x_i, z_i, b_i=0.0):
    """Enumerate every 0/1 mask of a row; return ``(mask, violation)`` of the most violated.

    ``checks_row`` is the pair ``(Ľ row, Ǔ row)``. The earliest mask in binary
    counting order wins ties.
    """
    w = np.asarray(W_row, dtype=np.float64)
    if w.size > 20:
        raise ValueError(f"row width {w.size} exceeds the exhaustive limit of 20")
    lchk, uchk = (np.asarray(c, dtype=np.float64) for c in checks_row)
    masks = all_masks(w.size)
    xp = np.asarray(x_prev, dtype=np.float64)
    rhs = masks @ (w * xp) + z_i * b_i - masks @ (w * lchk) * (1 - z_i) + (1 - masks) @ (w * uchk) * z_i
    viol = x_i - rhs
    i = int(np.argmax(viol))
    return masks[i].astype(bool), float(viol[i])


def dense_checks(W, l_prev, u_prev):
    """Check matrices on a dense weight matrix."""
    W = np.asarray(W)
    L = np.where(W >= 0, l_prev[None, :], u_prev[None, :])
    U = np.where(W >= 0, u_prev[None, :], l_prev[None, :])
    return L, U


def explicit_lagrangian(net: Network, bounds, alpha, beta, x, z) -> float:
    """Lagrangian as a literal sum of objective plus multiplier times constraint residual.

    ``beta`` is an :class:`~relaxbound.saddlepoint.ExplicitBeta`; masks are in the
    layers' mask shape and are mapped to dense operators here.
    """
    n = net.n_layers
    last = net.layers[-1]
    value = float((last.dense() @ x[n - 1] + last.bias_flat)[0])
    for k in range(1, n):
        layer = net.layers[k - 1]
        W, b = layer.dense(), layer.bias_flat
        lp, up = bounds.post_lower(k - 1), bounds.post_upper(k - 1)
        L, U = dense_checks(W, lp, up)
        xp, xk, zk = x[k - 1], x[k], z[k]
        pre = W @ xp + b
        value += float(alpha[k] @ (pre - xk))
        value += float(beta.zero[k] @ (xk - zk * bounds.pre_upper[k]))
        value += float(beta.one[k] @ (xk - pre + (1 - zk) * bounds.pre_lower[k]))
        for mask, vals in beta.terms[k]:
            I = dense_mask(layer, mask)
            rhs = (W * I) @ xp + zk * b - (W * I * L).sum(axis=1) * (1 - zk) \
                + (W * (1 - I) * U).sum(axis=1) * zk
            value += float(vals @ (xk - rhs))
    return value


def explicit_dual_value(net: Network, bounds, alpha, beta):
    """Minimum of :func:`explicit_lagrangian` over the primal boxes.

    The Lagrangian is affine in ``(x, z)``; its coefficients are read off by
    probing unit vectors, then each variable goes to the cheaper end of its box.
    Returns ``(value, x, z)``.
    """
    n = net.n_layers
    x0 = [np.zeros(net.input_size)] + [np.zeros(net.layers[k - 1].out_size) for k in range(1, n)]
    z0 = [None] + [np.zeros(net.layers[k - 1].out_size) for k in range(1, n)]
    base = explicit_lagrangian(net, bounds, alpha, beta, x0, z0)
    value = base
    xs, zs = [], [None]
    for k in range(n):
        xk = np.empty_like(x0[k])
        for i in range(x0[k].size):
            x0[k][i] = 1.0
            c = explicit_lagrangian(net, bounds, alpha, beta, x0, z0) - base
            x0[k][i] = 0.0
            xk[i] = bounds.post_lower(k)[i] if c > 0 else bounds.post_upper(k)[i]
            value += c * xk[i]
        xs.append(xk)
    for k in range(1, n):
        zk = np.empty_like(z0[k])
        for i in range(z0[k].size):
            z0[k][i] = 1.0
            c = explicit_lagrangian(net, bounds, alpha, beta, x0, z0) - base
            z0[k][i] = 0.0
            zk[i] = 0.0 if c > 0 else 1.0
            value += min(c, 0.0)
        zs.append(zk)
    return value, xs, zs


@dataclass(frozen=True)
class GridSpec:
    points_per_dim: int = 101

    def total(self, dim: int) -> int:
        return self.points_per_dim ** dim


def grid_min(net: Network, domain: InputDomain, grid: GridSpec = GridSpec()):
    """Smallest output over a regular grid plus the box corners: an upper bound on the true minimum."""
    dim = domain.dim
    if dim > 3:
        raise ValueError(f"grid search supports at most 3 input dimensions, got {dim}")
    if grid.total(dim) > 10 ** 6:
        raise ValueError("grid exceeds 10^6 points")
    axes = [np.linspace(lo, hi, grid.points_per_dim) for lo, hi in zip(domain.lower, domain.upper)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
    pts = np.vstack([pts, domain.corners()])
    vals = batch_forward(net, pts)
    i = int(np.argmin(vals))
    return float(vals[i]), pts[i]


def sample_min(net: Network, domain: InputDomain, n: int = 1000, seed: int = 0):
    """Smallest output over uniform samples plus box corners."""
    rng = np.random.default_rng(seed)
    pts = np.vstack([domain.sample(rng, n), domain.corners(limit=1024)])
    vals = batch_forward(net, pts)
    i = int(np.argmin(vals))
    return float(vals[i]), pts[i]


def batch_forward(net: Network, points) -> np.ndarray:
    """Scalar outputs for many inputs, via dense matrices."""
    a = np.asarray(points, dtype=np.float64).T
    for i, layer in enumerate(net.layers):
        a = layer.dense() @ a + layer.bias_flat[:, None]
        if i < net.n_layers - 1:
            a = np.maximum(a, 0.0)
    return a[0]


def exhaustive_phase_min(net: Network, domain: InputDomain, max_neurons: int = 12):
    """Exact minimum of the output: one LP per activation pattern of the hidden neurons.

    Returns ``(value, argmin)``. Exponential in the number of hidden neurons.
    """
    from scipy.optimize import linprog

    hidden = [layer.out_size for layer in net.layers[:-1]]
    total = sum(hidden)
    if total > max_neurons:
        raise ValueError(f"{total} hidden neurons exceed the enumeration limit of {max_neurons}")
    box = list(zip(domain.lower, domain.upper))
    best, arg = np.inf, None
    for pattern in all_masks(total).astype(bool):
        A, rhs = [], []
        M, c = np.eye(net.input_size), np.zeros(net.input_size)
        pos = 0
        for layer, size in zip(net.layers[:-1], hidden):
            W, b = layer.dense(), layer.bias_flat
            Mk, ck = W @ M, W @ c + b
            on = pattern[pos:pos + size]
            pos += size
            # on: W x + b >= 0; off: W x + b <= 0
            sign = np.where(on, -1.0, 1.0)
            A.append(sign[:, None] * Mk)
            rhs.append(-sign * ck)
            M, c = Mk * on[:, None], ck * on
        last = net.layers[-1]
        obj, off = last.dense() @ M, last.dense() @ c + last.bias_flat
        res = linprog(obj[0], A_ub=np.vstack(A) if A else None, b_ub=np.concatenate(rhs) if rhs else None,
                      bounds=box, method="highs")
        if res.status == 0 and res.fun + off[0] < best:
            best, arg = float(res.fun + off[0]), res.x
    return best, arg
