"""Saddle Point: Frank-Wolfe on the price-capped Anderson saddle problem.

The exponentially many ``β`` never appear explicitly. Every Frank-Wolfe vertex
puts its mass on one constraint per neuron, so the iterate is summarised by
four linear aggregates (``mass``, ``back``, ``s3``, ``s4``) whose size does not
depend on the number of iterations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _lagrangian as core
from ._lagrangian import Aggregates
from .activeset import ActiveSetConfig, _Checks, activeset_solve, as_aggregates, ASDualState
from .base import SolveResult
from .bigm import BigMDualState, bigm_solve, _bigm_part
from .network import masked_backward, masked_forward
from .optim import LinearSchedule
from .relaxation import anderson_terms, oracle_most_violated

log = logging.getLogger(__name__)

SuffStats = Aggregates


# -- explicit multipliers (small problems and tests) -------------------------

@dataclass
class ExplicitBeta:
    """Literal ``β`` per hidden layer: Big-M pair plus a list of ``(mask, values)`` terms."""

    zero: list
    one: list
    terms: list

    @classmethod
    def zeros(cls, net) -> "ExplicitBeta":
        n = net.n_layers
        z = [None] + [np.zeros(net.layers[k - 1].out_size) for k in range(1, n)]
        return cls(z, [None if v is None else v.copy() for v in z], [[] for _ in range(n)])

    @classmethod
    def from_bigm(cls, state: BigMDualState) -> "ExplicitBeta":
        n = len(state.beta0)
        return cls([None if v is None else v.copy() for v in state.beta0],
                   [None if v is None else v.copy() for v in state.beta1], [[] for _ in range(n)])

    @classmethod
    def from_activeset(cls, state: ASDualState) -> "ExplicitBeta":
        out = cls.from_bigm(state.bigm)
        for k, (entries, betas) in enumerate(zip(state.index.masks, state.beta_B)):
            out.terms[k] = [(e.mask, b.copy()) for e, b in zip(entries, betas)]
        return out

    def combine(self, other: "ExplicitBeta", gamma: float) -> "ExplicitBeta":
        """``(1 - γ) self + γ other``; terms with equal masks are merged."""
        def mix(a, b):
            return [None if x is None else (1.0 - gamma) * x + gamma * y for x, y in zip(a, b)]
        terms = []
        for mine, theirs in zip(self.terms, other.terms):
            merged = {}
            for scale, group in ((1.0 - gamma, mine), (gamma, theirs)):
                for m, v in group:
                    key = m.tobytes()
                    if key in merged:
                        merged[key] = (m, merged[key][1] + scale * v)
                    else:
                        merged[key] = (m, scale * v)
            terms.append(list(merged.values()))
        return ExplicitBeta(mix(self.zero, other.zero), mix(self.one, other.one), terms)

    def l1(self, k) -> np.ndarray:
        """Per-neuron total multiplier of layer ``k``."""
        total = self.zero[k] + self.one[k]
        for _, v in self.terms[k]:
            total = total + v
        return total


def stats_from_explicit(net, bounds, beta: ExplicitBeta) -> SuffStats:
    """Aggregate explicit multipliers term by term."""
    agg = core.bigm_aggregates(net, bounds, beta.zero, beta.one)
    all_checks = _Checks(net, bounds)
    for k in range(1, net.n_layers):
        if not beta.terms[k]:
            continue
        layer = net.layers[k - 1]
        checks = all_checks[k]
        for mask, values in beta.terms[k]:
            lc, uc = anderson_terms(layer, checks, mask)
            agg.mass[k] = agg.mass[k] + values
            agg.back[k] = agg.back[k] + masked_backward(layer, mask, values)
            agg.s3[k] = agg.s3[k] + lc * values
            agg.s4[k] = agg.s4[k] + uc * values
    return agg


# -- state ---------------------------------------------------------------------

@dataclass
class PriceCaps:
    mu_alpha: list
    mu_beta: list


@dataclass
class SPState:
    """Primal iterate ``(x, z)`` and dual iterate ``(α, ζ)``; ``stats.mass`` is the β ℓ1 tracker."""

    x: list
    z: list
    alpha: list
    stats: SuffStats
    t: int = 0

    def dual_entries(self) -> int:
        return sum(a.size for a in self.alpha if a is not None) + self.stats.entries()

    def is_feasible(self, caps: PriceCaps, bounds, tol=1e-12) -> bool:
        for k in range(1, len(self.alpha)):
            if np.any(self.alpha[k] < -tol) or np.any(self.alpha[k] > caps.mu_alpha[k] + tol):
                return False
            if np.any(self.stats.mass[k] < -tol) or np.any(self.stats.mass[k] > caps.mu_beta[k] + tol):
                return False
            if np.any(self.z[k] < -tol) or np.any(self.z[k] > 1 + tol):
                return False
        for k in range(len(self.x)):
            if np.any(self.x[k] < bounds.post_lower(k) - tol) or np.any(self.x[k] > bounds.post_upper(k) + tol):
                return False
        return True


def lagrangian_via_stats(state: SPState, net, bounds):
    """Dual value and primal minimiser computed from ``(α, ζ)`` only."""
    x, z, d = core.inner_min(net, bounds, state.alpha, state.stats)
    return d, x, z


def primal_cond_grad(state: SPState, net, bounds):
    _, x, z = lagrangian_via_stats(state, net, bounds)
    return x, z


@dataclass
class DualVertex:
    """Frank-Wolfe vertex of the dual domain at a primal point.

    ``choice[k][i]`` is -1 for no mass, 0 for ``β_0``, 1 for ``β_1`` and 2 for
    the oracle mask ``masks[k]``.
    """

    alpha: list
    choice: list
    masks: list
    mu_beta: list

    def explicit(self) -> ExplicitBeta:
        n = len(self.alpha)
        zero, one, terms = [None] * n, [None] * n, [[] for _ in range(n)]
        for k in range(1, n):
            c, mu = self.choice[k], self.mu_beta[k]
            zero[k] = np.where(c == 0, mu, 0.0)
            one[k] = np.where(c == 1, mu, 0.0)
            vals = np.where(c == 2, mu, 0.0)
            if np.any(vals > 0):
                terms[k] = [(self.masks[k], vals)]
        return ExplicitBeta(zero, one, terms)


def dual_vertex(x, z, net, bounds, caps: PriceCaps, checks=None, restricted=False) -> DualVertex:
    """Linear maximisation of the Lagrangian over the capped dual domain at ``(x, z)``.

    Per neuron the mass goes to the most violated of the two Big-M constraints
    and the oracle's exponential-family constraint (Big-M wins ties), or
    nowhere when no constraint is violated. ``restricted`` drops the
    exponential family.
    """
    checks = checks or _Checks(net, bounds)
    n = net.n_layers
    alpha, choice, masks = [None] * n, [None] * n, [None] * n
    for k in range(1, n):
        layer = net.layers[k - 1]
        xp, xk, zk = x[k - 1], x[k], z[k]
        pre = layer.forward(xp)
        alpha[k] = np.where(pre - xk >= 0, caps.mu_alpha[k], 0.0)
        v0 = xk - zk * bounds.pre_upper[k]
        v1 = xk - pre + (1.0 - zk) * bounds.pre_lower[k]
        cands = [v0, v1]
        if not restricted:
            masks[k] = oracle_most_violated(layer, None, checks[k], xp, xk, zk)
            lc, uc = anderson_terms(layer, checks[k], masks[k])
            cands.append(xk - (masked_forward(layer, masks[k], xp) + zk * layer.bias_flat
                               - lc * (1.0 - zk) + uc * zk))
        v = np.stack(cands)
        best = v.argmax(axis=0)
        choice[k] = np.where(v.max(axis=0) >= 0, best, -1)
    return DualVertex(alpha, choice, masks, caps.mu_beta)


def vertex_stats(vertex: DualVertex, net, bounds) -> SuffStats:
    """Aggregates of a vertex: one masked product per layer at most."""
    n = net.n_layers
    zero, one = [None] * n, [None] * n
    for k in range(1, n):
        c, mu = vertex.choice[k], vertex.mu_beta[k]
        zero[k] = np.where(c == 0, mu, 0.0)
        one[k] = np.where(c == 1, mu, 0.0)
    agg = core.bigm_aggregates(net, bounds, zero, one)
    checks = _Checks(net, bounds)
    for k in range(1, n):
        if vertex.masks[k] is None:
            continue
        vals = np.where(vertex.choice[k] == 2, vertex.mu_beta[k], 0.0)
        if not np.any(vals > 0):
            continue
        layer = net.layers[k - 1]
        lc, uc = anderson_terms(layer, checks[k], vertex.masks[k])
        agg.mass[k] = agg.mass[k] + vals
        agg.back[k] = agg.back[k] + masked_backward(layer, vertex.masks[k], vals)
        agg.s3[k] = agg.s3[k] + lc * vals
        agg.s4[k] = agg.s4[k] + uc * vals
    return agg


def dual_cond_grad(state: SPState, net, bounds, caps: PriceCaps, checks=None):
    """``(ᾱ, ζ̄)``: the dual Frank-Wolfe vertex at the current primal iterate, as aggregates."""
    vertex = dual_vertex(state.x, state.z, net, bounds, caps, checks)
    return vertex.alpha, vertex_stats(vertex, net, bounds)


def step_size(t: int, rule: str = "practical") -> float:
    if rule == "theory":
        return 1.0 / (t + 1)
    if rule == "practical":
        return 1.0 / (t + 10)
    raise ValueError(f"unknown step rule {rule!r}")


def sp_step(state: SPState, cond_grads, t: Optional[int] = None, rule: str = "practical") -> SPState:
    """Move primal and dual blocks towards their conditional gradients with the same ``γ``."""
    t = state.t if t is None else t
    x_bar, z_bar, alpha_bar, stats_bar = cond_grads
    g = step_size(t, rule)

    def mix(a, b):
        return [None if u is None else (1.0 - g) * u + g * v for u, v in zip(a, b)]
    return SPState(mix(state.x, x_bar), mix(state.z, z_bar), mix(state.alpha, alpha_bar),
                   state.stats.combine(stats_bar, g), t + 1)


def price_caps_init(init_state, c_alpha: float = 1e-2, c_beta: float = 1e-2, net=None, bounds=None) -> PriceCaps:
    """Caps equal to the initial duals where positive, small constants elsewhere."""
    if c_alpha <= 0 or c_beta <= 0:
        raise ValueError("cap constants must be positive")
    if isinstance(init_state, ASDualState):
        alpha = init_state.bigm.alpha
        mass = [None] + [init_state.bigm.beta0[k] + init_state.bigm.beta1[k] + sum(init_state.beta_B[k], 0.0)
                         for k in range(1, len(alpha))]
    elif isinstance(init_state, BigMDualState):
        alpha = init_state.alpha
        mass = [None] + [init_state.beta0[k] + init_state.beta1[k] for k in range(1, len(alpha))]
    else:
        raise TypeError("price caps need a Big-M or Active Set dual state")
    mu_a = [None] + [np.where(a > 0, a, c_alpha) for a in alpha[1:]]
    mu_b = [None] + [np.where(m > 0, m, c_beta) for m in mass[1:]]
    return PriceCaps(mu_a, mu_b)


@dataclass
class PrimalInitConfig:
    steps: int = 100
    schedule: LinearSchedule = field(default_factory=lambda: LinearSchedule(1e-2, 1e-5))
    restricted: bool = True


def primal_start(net, bounds):
    """Box midpoints, with ``z = 0.5``."""
    n = net.n_layers
    x = [0.5 * (bounds.post_lower(k) + bounds.post_upper(k)) for k in range(n)]
    z = [None] + [np.full(net.layers[k - 1].out_size, 0.5) for k in range(1, n)]
    return x, z


def primal_objective(x, z, net, bounds, caps, checks=None, restricted=True):
    """Value of the primal view (inner maximisation in closed form) and its maximising vertex."""
    vertex = dual_vertex(x, z, net, bounds, caps, checks, restricted)
    stats = vertex_stats(vertex, net, bounds)
    f, g, const = core.coefficients(net, vertex.alpha, stats)
    return core.evaluate(f, g, const, x, z), f, g


def primal_init(net, bounds, caps: PriceCaps, config: Optional[PrimalInitConfig] = None):
    """Projected subgradient descent on the primal view; returns the best iterate."""
    config = config or PrimalInitConfig()
    x, z = primal_start(net, bounds)
    checks = _Checks(net, bounds)
    n = net.n_layers
    best_val, best = np.inf, (x, z)
    for t in range(config.steps + 1):
        val, f, g = primal_objective(x, z, net, bounds, caps, checks, config.restricted)
        if val < best_val:
            best_val, best = val, (x, z)
        if t == config.steps:
            break
        lr = config.schedule(t, config.steps)
        # the gradient of the view is (-f, -g), so descent adds lr * (f, g)
        x = [np.clip(x[k] + lr * f[k], bounds.post_lower(k), bounds.post_upper(k)) for k in range(n)]
        z = [None] + [np.clip(z[k] + lr * g[k], 0.0, 1.0) for k in range(1, n)]
    return best


@dataclass
class SaddlePointConfig:
    init: str = "bigm"
    init_iters: int = 500
    init_schedule: LinearSchedule = field(default_factory=lambda: LinearSchedule(1e-2, 1e-4))
    as_config: Optional[ActiveSetConfig] = None
    iters: int = 1000
    step_rule: str = "practical"
    c_alpha: float = 1e-2
    c_beta: float = 1e-2
    primal: PrimalInitConfig = field(default_factory=PrimalInitConfig)

    def __post_init__(self):
        if self.init not in ("bigm", "activeset"):
            raise ValueError(f"unknown initialisation {self.init!r}")
        if self.iters < 0 or self.init_iters < 0:
            raise ValueError("iteration counts must be non-negative")
        step_size(0, self.step_rule)


def saddlepoint_solve(net, bounds, config: Optional[SaddlePointConfig] = None, init_state=None) -> SolveResult:
    """Initialise duals, caps and primals, then run SP-FW; reports the best dual value seen."""
    config = config or SaddlePointConfig()
    core.check_scalar_output(net, bounds)
    if config.init == "bigm":
        init = bigm_solve(net, bounds, config.init_iters, config.init_schedule,
                          init_state=_bigm_part(init_state))
        stats = core.bigm_aggregates(net, bounds, init.state.beta0, init.state.beta1)
    else:
        as_cfg = config.as_config or ActiveSetConfig(init_iters=config.init_iters,
                                                     init_schedule=config.init_schedule)
        init = activeset_solve(net, bounds, as_cfg, init_state=init_state)
        stats = as_aggregates(init.state, net, bounds)
    caps = price_caps_init(init.state, config.c_alpha, config.c_beta)
    x, z = primal_init(net, bounds, caps, config.primal)
    state = SPState(x, z, [None if a is None else a.copy() for a in init.state.alpha], stats, 0)
    checks = _Checks(net, bounds)
    best = init.bound
    history, sizes = [], []
    for t in range(config.iters + 1):
        d, x_bar, z_bar = lagrangian_via_stats(state, net, bounds)
        history.append(d)
        sizes.append(state.dual_entries())
        best = max(best, d)
        if t == config.iters:
            break
        alpha_bar, stats_bar = dual_cond_grad(state, net, bounds, caps, checks)
        state = sp_step(state, (x_bar, z_bar, alpha_bar, stats_bar), t, config.step_rule)
    return SolveResult(best, state, state.x[0], history, init.iters + config.iters, sizes,
                       info={"caps": caps, "init": init})


class SaddlePointSolver:
    name = "saddlepoint"

    def __init__(self, config: Optional[SaddlePointConfig] = None):
        self.config = config or SaddlePointConfig()

    def solve(self, net, bounds, warm=None) -> SolveResult:
        return saddlepoint_solve(net, bounds, self.config, init_state=warm)
