"""Active Set: supergradient ascent on a restricted Anderson dual that grows over time.

Starting from Big-M duals, masks returned by the separation oracle at the
current primal minimiser are added to a small per-layer index, and their
multipliers are optimised alongside ``α``, ``β_0`` and ``β_1``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _lagrangian as core
from .base import SolveResult
from .bigm import BigMDualState, bigm_init, bigm_solve, bigm_supergradient, _bigm_part
from .network import masked_backward, masked_forward
from .optim import Adam, LinearSchedule
from .relaxation import anderson_terms, check_matrices, oracle_most_violated

log = logging.getLogger(__name__)


@dataclass
class ActiveMask:
    """A mask in the index with its precomputed corner constants."""

    mask: np.ndarray
    lc: np.ndarray
    uc: np.ndarray


@dataclass
class ActiveSetIndex:
    """Ordered, deduplicated masks per hidden layer (index 0 unused)."""

    masks: list
    _keys: list = field(default_factory=list, repr=False)

    @classmethod
    def empty(cls, n_layers: int) -> "ActiveSetIndex":
        return cls([[] for _ in range(n_layers)], [set() for _ in range(n_layers)])

    def __contains__(self, item):
        k, mask = item
        return _mask_key(mask) in self._keys[k]

    def add(self, k: int, entry: ActiveMask):
        self.masks[k].append(entry)
        self._keys[k].add(_mask_key(entry.mask))

    def count(self, k: int) -> int:
        return len(self.masks[k])

    def copy(self) -> "ActiveSetIndex":
        return ActiveSetIndex([list(m) for m in self.masks], [set(s) for s in self._keys])


def _mask_key(mask):
    return np.packbits(np.asarray(mask, dtype=bool)).tobytes() + bytes(str(np.shape(mask)), "ascii")


@dataclass
class ASDualState:
    """Big-M duals plus one multiplier vector per active mask."""

    bigm: BigMDualState
    index: ActiveSetIndex
    beta_B: list

    def copy(self) -> "ASDualState":
        return ASDualState(self.bigm.copy(), self.index.copy(),
                           [[b.copy() for b in layer] for layer in self.beta_B])

    def entries(self) -> int:
        return self.bigm.entries() + sum(b.size for layer in self.beta_B for b in layer)

    @property
    def alpha(self):
        return self.bigm.alpha


def as_init(bigm_state: BigMDualState) -> ASDualState:
    n = len(bigm_state.alpha)
    return ASDualState(bigm_state.copy(), ActiveSetIndex.empty(n), [[] for _ in range(n)])


def as_aggregates(state: ASDualState, net, bounds):
    """Big-M aggregates, extended only where masks are active."""
    b0, b1 = state.bigm.beta0, state.bigm.beta1
    agg = core.bigm_aggregates(net, bounds, b0, b1)
    for k in range(1, net.n_layers):
        entries = state.index.masks[k]
        if not entries:
            continue
        layer = net.layers[k - 1]
        for entry, beta in zip(entries, state.beta_B[k]):
            agg.mass[k] = agg.mass[k] + beta
            agg.back[k] = agg.back[k] + masked_backward(layer, entry.mask, beta)
            agg.s3[k] = agg.s3[k] + entry.lc * beta
            agg.s4[k] = agg.s4[k] + entry.uc * beta
    return agg


def as_inner_min(state: ASDualState, net, bounds, index: Optional[ActiveSetIndex] = None):
    """Minimiser and value of the restricted Lagrangian."""
    if index is not None and index is not state.index:
        state = ASDualState(state.bigm, index, state.beta_B)
    _check(state)
    core.check_scalar_output(net, bounds)
    return core.inner_min(net, bounds, state.alpha, as_aggregates(state, net, bounds))


def _check(state: ASDualState):
    for k, (entries, betas) in enumerate(zip(state.index.masks, state.beta_B)):
        if len(entries) != len(betas):
            raise ValueError(f"layer {k}: {len(entries)} masks but {len(betas)} multiplier vectors")


def as_supergradient(state: ASDualState, x_star, z_star, net, bounds):
    grads = bigm_supergradient(state.bigm, x_star, z_star, net, bounds)
    for k in range(1, net.n_layers):
        layer = net.layers[k - 1]
        x, z, xp = x_star[k], z_star[k], x_star[k - 1]
        for m, entry in enumerate(state.index.masks[k]):
            rhs = masked_forward(layer, entry.mask, xp) + z * layer.bias_flat \
                - entry.lc * (1.0 - z) + entry.uc * z
            grads[("B", k, m)] = x - rhs
    return grads


class _Checks:
    """Lazily built check matrices per layer for a fixed bound set."""

    def __init__(self, net, bounds):
        self.net, self.bounds, self.cache = net, bounds, {}

    def __getitem__(self, k):
        if k not in self.cache:
            self.cache[k] = check_matrices(self.net.layers[k - 1], self.bounds.post_lower(k - 1),
                                           self.bounds.post_upper(k - 1))
        return self.cache[k]


def as_select_variables(x_star, z_star, net, bounds, index: ActiveSetIndex, checks=None,
                        max_cuts: Optional[int] = None):
    """Oracle mask per hidden layer, or None where it is trivial, known or over the cap."""
    checks = checks or _Checks(net, bounds)
    out = [None] * net.n_layers
    for k in range(1, net.n_layers):
        if max_cuts is not None and index.count(k) >= max_cuts:
            continue
        layer = net.layers[k - 1]
        mask = oracle_most_violated(layer, None, checks[k], x_star[k - 1], x_star[k], z_star[k])
        if not mask.any() or mask.all() or (k, mask) in index:
            continue
        out[k] = mask
    return out


@dataclass
class ActiveSetConfig:
    init_iters: int = 500
    iters: int = 1500
    omega: int = 450
    vars_per_addition: int = 2
    max_cuts: int = 7
    init_schedule: LinearSchedule = field(default_factory=lambda: LinearSchedule(1e-2, 1e-4))
    schedule: LinearSchedule = field(default_factory=lambda: LinearSchedule(1e-3, 1e-6))

    def __post_init__(self):
        if min(self.init_iters, self.iters, self.vars_per_addition, self.max_cuts) < 0 or self.omega < 1:
            raise ValueError("Active Set configuration values must be non-negative (omega >= 1)")


def activeset_solve(net, bounds, config: Optional[ActiveSetConfig] = None,
                    init_state=None) -> SolveResult:
    """Big-M warm-up followed by ascent on the growing restricted dual.

    The reported bound is the best value over both phases.
    """
    config = config or ActiveSetConfig()
    core.check_scalar_output(net, bounds)
    warm = bigm_solve(net, bounds, config.init_iters, config.init_schedule, init_state=_bigm_part(init_state))
    state = as_init(warm.state)
    # the warm-up's final evaluation is repeated as this phase's first one
    history, sizes = warm.history[:-1], warm.dual_sizes[:-1]
    best = warm.bound
    checks = _Checks(net, bounds)
    adam = Adam()
    n_iter = config.iters
    x = None
    for t in range(n_iter + 1):
        agg = as_aggregates(state, net, bounds)
        x, z, d = core.inner_min(net, bounds, state.alpha, agg)
        history.append(d)
        sizes.append(state.entries())
        best = max(best, d)
        if t == n_iter:
            break
        if t % config.omega < config.vars_per_addition and config.max_cuts > 0:
            # new multipliers start at 0, so (x, z) still minimises the extended Lagrangian
            added = _extend(state, x, z, net, bounds, checks, config.max_cuts)
            if added:
                log.debug("iteration %d: added masks on layers %s", t, added)
        grads = as_supergradient(state, x, z, net, bounds)
        state = _as_step(state, grads, adam, config.schedule(t, n_iter))
    return SolveResult(best, state, x[0], history, config.init_iters + n_iter, sizes)


def _extend(state: ASDualState, x, z, net, bounds, checks, max_cuts):
    picks = as_select_variables(x, z, net, bounds, state.index, checks, max_cuts)
    added = []
    for k, mask in enumerate(picks):
        if mask is None:
            continue
        lc, uc = anderson_terms(net.layers[k - 1], checks[k], mask)
        state.index.add(k, ActiveMask(mask, lc, uc))
        state.beta_B[k].append(np.zeros(net.layers[k - 1].out_size))
        added.append(k)
    return added


def _as_step(state: ASDualState, grads, adam: Adam, lr: float) -> ASDualState:
    from .bigm import bigm_step
    bigm = bigm_step(state.bigm, grads, adam, lr)
    beta_B = [[adam.ascend(("B", k, m), beta, grads[("B", k, m)], lr) for m, beta in enumerate(layer)]
              for k, layer in enumerate(state.beta_B)]
    return ASDualState(bigm, state.index, beta_B)


class ActiveSetSolver:
    name = "activeset"

    def __init__(self, config: Optional[ActiveSetConfig] = None):
        self.config = config or ActiveSetConfig()

    def solve(self, net, bounds, warm=None) -> SolveResult:
        return activeset_solve(net, bounds, self.config, init_state=warm)
