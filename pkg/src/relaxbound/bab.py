"""Branch and bound over ReLU phases, with stratified two-tier bounding.

Properties are in canonical form: the scalar network output must be positive
on the whole input domain. Nodes are explored best-first on their lower
bound; a node is discarded once its lower bound is positive, and a primal
input with negative output ends the search.
"""
from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .network import InputDomain, Network, forward_eval
from .relaxation import BigMDual, IntervalOnly, LayerBounds, _affine_interval, intermediate_bounds

log = logging.getLogger(__name__)

FREE, PASSING, BLOCKING = 0, 1, -1


@dataclass
class Subproblem:
    """A search node: phase fixations and the bounds they imply."""

    bounds: LayerBounds
    fixations: list
    parent_lb: float = -math.inf
    depth: int = 0
    hard: bool = False
    warm: object = None
    infeasible: bool = False

    @classmethod
    def root(cls, net: Network, bounds: LayerBounds) -> "Subproblem":
        fix = [None] + [np.zeros(net.layers[k - 1].out_size, dtype=np.int8) for k in range(1, net.n_layers)]
        return cls(bounds, fix)

    def ambiguous(self, k: int) -> np.ndarray:
        return (self.bounds.pre_lower[k] < 0) & (self.bounds.pre_upper[k] > 0)


def _refresh(net: Network, bounds: LayerBounds, fixations, start: int) -> LayerBounds:
    """Interval-recompute layers after ``start`` under the fixations, never loosening."""
    for k in range(start + 1, net.n_layers + 1):
        l, u = _affine_interval(net.layers[k - 1], bounds.post_lower(k - 1), bounds.post_upper(k - 1))
        lo = np.maximum(bounds.pre_lower[k], l)
        hi = np.minimum(bounds.pre_upper[k], u)
        if k < net.n_layers:
            fix = fixations[k]
            lo = np.where(fix == PASSING, np.maximum(lo, 0.0), lo)
            hi = np.where(fix == BLOCKING, np.minimum(hi, 0.0), hi)
        bounds.pre_lower[k], bounds.pre_upper[k] = lo, hi
    return bounds


def split_relu(sub: Subproblem, neuron, net: Network):
    """Passing and blocking children of an ambiguous neuron ``(layer, index)``."""
    k, j = neuron
    if not (1 <= k < net.n_layers) or not sub.ambiguous(k)[j]:
        raise ValueError(f"neuron {neuron} is not ambiguous in this subproblem")
    children = []
    for phase in (PASSING, BLOCKING):
        bounds = sub.bounds.copy()
        fix = [None if f is None else f.copy() for f in sub.fixations]
        fix[k][j] = phase
        if phase == PASSING:
            bounds.pre_lower[k][j] = 0.0
        else:
            bounds.pre_upper[k][j] = 0.0
        bounds = _refresh(net, bounds, fix, k)
        child = Subproblem(bounds, fix, sub.parent_lb, sub.depth + 1, sub.hard, sub.warm)
        child.infeasible = not bounds.is_consistent(tol=0.0)
        children.append(child)
    return children[0], children[1]


def branch_scores(sub: Subproblem, net: Network) -> list:
    """Per hidden layer, the intercept magnitude ``|û l̂ / (û - l̂)|`` of each ambiguous neuron
    scaled by its backpropagated output sensitivity; zero for stable neurons."""
    n = net.n_layers
    slopes, amb = [None] * n, [None] * n
    for k in range(1, n):
        lo, hi = sub.bounds.pre_lower[k], sub.bounds.pre_upper[k]
        amb[k] = (lo < 0) & (hi > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            slopes[k] = np.where(amb[k], hi / (hi - lo), (lo >= 0).astype(float))
    sens = [None] * n
    s = np.ones(net.output_size)
    for k in range(n - 1, 0, -1):
        s = net.layers[k].absolute().backward(s)
        sens[k] = s
        s = slopes[k] * s
    scores = [None] * n
    for k in range(1, n):
        lo, hi = sub.bounds.pre_lower[k], sub.bounds.pre_upper[k]
        with np.errstate(divide="ignore", invalid="ignore"):
            intercept = np.where(amb[k], np.abs(hi * lo / (hi - lo)), 0.0)
        scores[k] = np.where(amb[k], intercept * sens[k], -np.inf)
    return scores


def branch_select(sub: Subproblem, net: Network, bounds: Optional[LayerBounds] = None):
    """Highest-scoring ambiguous neuron; ties go to the lowest ``(layer, index)``.

    Returns None when no neuron is ambiguous.
    """
    if bounds is not None and bounds is not sub.bounds:
        sub = Subproblem(bounds, sub.fixations)
    best, pick = -np.inf, None
    for k, sc in enumerate(branch_scores(sub, net)):
        if sc is None or sc.size == 0:
            continue
        j = int(np.argmax(sc))
        if sc[j] > best:
            best, pick = sc[j], (k, j)
    return pick


def leaf_minimum(net: Network, bounds: LayerBounds):
    """Exact minimum when every neuron has a fixed phase: one LP over the input box.

    Returns ``(value, x0)``, or None if the phase pattern is empty.
    """
    d = net.input_size
    M, c = np.eye(d), np.zeros(d)
    A_ub, b_ub = [], []
    for k in range(1, net.n_layers + 1):
        W = net.layers[k - 1].dense()
        b = net.layers[k - 1].bias_flat
        Mk, ck = W @ M, W @ c + b
        if k == net.n_layers:
            M, c = Mk, ck
            break
        passing = bounds.pre_lower[k] >= 0
        blocking = ~passing
        if np.any(blocking & (bounds.pre_upper[k] > 0)):
            raise ValueError("leaf_minimum needs every neuron to be stable")
        # passing: pre >= 0, blocking: pre <= 0
        A_ub.append(np.where(passing[:, None], -Mk, Mk))
        b_ub.append(np.where(passing, ck, -ck))
        M = np.where(passing[:, None], Mk, 0.0)
        c = np.where(passing, ck, 0.0)
    box = list(zip(bounds.input_lower, bounds.input_upper))
    res = linprog(M[0], A_ub=np.vstack(A_ub) if A_ub else None,
                  b_ub=np.concatenate(b_ub) if b_ub else None, bounds=box, method="highs")
    if res.status == 2:
        return None
    if res.status != 0:
        raise RuntimeError(f"leaf LP failed: {res.message}")
    x0 = np.clip(res.x, bounds.input_lower, bounds.input_upper)
    return float(res.fun + c[0]), x0


# -- stratified bounding ----------------------------------------------------------

class Decision(Enum):
    USE_LOOSE = "loose"
    USE_TIGHT = "tight"


@dataclass
class StratifiedState:
    """Root gap between the two methods and an EMA of per-split bound improvement."""

    l_gap: float = 0.0
    ema: Optional[float] = None
    decay: float = 0.5
    cost_ratio: float = 5.0

    def observe(self, improvement: float):
        if improvement <= 0:
            return
        self.ema = improvement if self.ema is None else self.decay * self.ema + (1 - self.decay) * improvement


def _log2_size(exponent: float) -> float:
    """``log2(max(2**e - 1, 1))`` without overflow."""
    if exponent > 50:
        return exponent
    return math.log2(max(2.0 ** exponent - 1.0, 1.0))


def subtree_sizes(parent_lb: float, l_gap: float, improvement: float):
    """Estimated log2 sizes of the subtree under the loose and the tight method."""
    a_l = -parent_lb / improvement + 1.0
    a_t = -(parent_lb + l_gap) / improvement + 1.0
    return _log2_size(a_l), _log2_size(a_t)


def stratified_decision(state: StratifiedState, sub: Subproblem) -> Decision:
    """Tight bounding for subtrees whose loose enumeration looks ``cost_ratio`` times larger."""
    if sub.hard:
        return Decision.USE_TIGHT
    if sub.parent_lb >= 0 or state.ema is None:
        return Decision.USE_LOOSE
    log_l, log_t = subtree_sizes(sub.parent_lb, state.l_gap, state.ema)
    if log_l - log_t > math.log2(state.cost_ratio):
        sub.hard = True
        return Decision.USE_TIGHT
    return Decision.USE_LOOSE


# -- driver ------------------------------------------------------------------------

class Status(Enum):
    VERIFIED = "verified"
    FALSIFIED = "falsified"
    TIMEOUT = "timeout"


@dataclass
class VerifyResult:
    status: Status
    counterexample: Optional[np.ndarray] = None
    lower_bound: float = -math.inf
    stats: dict = field(default_factory=dict)


@dataclass
class Budget:
    max_nodes: int = 10_000
    timeout_s: float = 60.0


def bab_verify(net: Network, domain: InputDomain, budget: Optional[Budget] = None, method="bigm",
               stratified: bool = False, loose=None, intermediate="interval",
               stratify_options: Optional[dict] = None, tight=None) -> VerifyResult:
    """Decide whether the scalar output of ``net`` is positive over ``domain``.

    ``method`` names the tight bounding method (or pass a solver as ``tight``).
    With ``stratified`` a cheap Big-M run bounds nodes until a subtree is
    judged hard.
    """
    from .methods import bab_solver, make_solver

    if net.output_size != 1:
        raise ValueError("verification needs a scalar output")
    budget = budget or Budget()
    tight = tight or bab_solver(method)
    loose = loose or make_solver("bigm", 30)
    start = time.perf_counter()
    refine = BigMDual(100) if intermediate == "bigm" else IntervalOnly()
    bounds = intermediate_bounds(net, domain, refine)
    stats = {"nodes": 0, "leaf_lps": 0, "bounds": {"loose": 0, "tight": 0}, "max_depth": 0,
             "global_lb": []}

    def elapsed():
        return time.perf_counter() - start

    def done(status, x=None, lb=-math.inf):
        stats["time_s"] = elapsed()
        return VerifyResult(status, x, lb, stats)

    def bound_node(sub, solver, kind):
        res = solver.solve(net, sub.bounds, warm=sub.warm)
        stats["bounds"][kind] += 1
        # Saddle Point states carry no multipliers to restart from; keep their initialiser's
        init = res.info.get("init")
        sub.warm = init.state if init is not None else res.state
        return res

    mid = domain.midpoint
    if forward_eval(net, mid)[0] < 0:
        return done(Status.FALSIFIED, mid)

    root = Subproblem.root(net, bounds)
    strat = StratifiedState(**(stratify_options or {}))
    if stratified:
        lo_res = bound_node(root, loose, "loose")
        root.warm = lo_res.state
        hi_res = bound_node(root, tight, "tight")
        strat.l_gap = max(0.0, hi_res.bound - lo_res.bound)
        results = [lo_res, hi_res]
    else:
        results = [bound_node(root, tight, "tight")]
    root_lb = max(r.bound for r in results)
    stats["nodes"] = 1
    for r in results:
        if r.x0 is not None and forward_eval(net, r.x0)[0] < 0:
            return done(Status.FALSIFIED, r.x0, root_lb)
    if root_lb > 0:
        return done(Status.VERIFIED, lb=root_lb)

    counter = 0
    closed_lb = math.inf
    heap = [(root_lb, counter, root)]
    while heap:
        lb, _, sub = heapq.heappop(heap)
        stats["global_lb"].append(lb)
        if elapsed() > budget.timeout_s or stats["nodes"] >= budget.max_nodes:
            return done(Status.TIMEOUT, lb=lb)
        neuron = branch_select(sub, net)
        if neuron is None:
            stats["leaf_lps"] += 1
            leaf = leaf_minimum(net, sub.bounds)
            if leaf is None:
                continue
            if leaf[0] > 0:
                closed_lb = min(closed_lb, leaf[0])
                continue
            return done(Status.FALSIFIED, leaf[1], lb)
        for child in split_relu(sub, neuron, net):
            if child.infeasible:
                continue
            child.parent_lb = lb
            stats["max_depth"] = max(stats["max_depth"], child.depth)
            use_tight = not stratified or stratified_decision(strat, child) is Decision.USE_TIGHT
            res = bound_node(child, tight if use_tight else loose, "tight" if use_tight else "loose")
            stats["nodes"] += 1
            if res.x0 is not None and forward_eval(net, res.x0)[0] < 0:
                return done(Status.FALSIFIED, res.x0, lb)
            if stratified and not use_tight:
                strat.observe(res.bound - lb)
            child_lb = max(res.bound, lb)
            if child_lb > 0:
                closed_lb = min(closed_lb, child_lb)
                continue
            counter += 1
            heapq.heappush(heap, (child_lb, counter, child))
    return done(Status.VERIFIED, lb=closed_lb)
