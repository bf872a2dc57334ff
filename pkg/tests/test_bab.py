import math

import numpy as np
import pytest

from relaxbound.bab import (BLOCKING, PASSING, Budget, Decision, Status, StratifiedState, Subproblem,
                            bab_verify, branch_scores, branch_select, leaf_minimum, split_relu,
                            stratified_decision, subtree_sizes)
from relaxbound.network import InputDomain, Linear, Network, forward_eval, random_network
from relaxbound.relaxation import interval_propagate
from relaxbound.testing.oracles import exhaustive_phase_min, sample_min


def shifted(net, offset):
    last = net.layers[-1]
    return Network(net.layers[:-1] + (Linear(last.weight, last.bias + offset),))


def relu_plus(c):
    return Network((Linear([[1.0]], [0.0]), Linear([[1.0]], [c])))


def test_split_single_relu():
    net = relu_plus(0.0)
    bounds = interval_propagate(net, InputDomain.box([-1.0], [2.0]))
    root = Subproblem.root(net, bounds)
    on, off = split_relu(root, (1, 0), net)
    assert on.fixations[1][0] == PASSING and off.fixations[1][0] == BLOCKING
    assert on.bounds.pre_lower[1][0] == 0.0 and off.bounds.pre_upper[1][0] == 0.0
    assert off.bounds.pre_upper[2][0] == 0.0
    assert on.depth == off.depth == 1
    with pytest.raises(ValueError):
        split_relu(on, (1, 0), net)


def test_children_are_never_looser(rng):
    for _ in range(10):
        net = random_network(rng, [2, 5, 5, 1])
        bounds = interval_propagate(net, InputDomain.box([-1, -1], [1, 1]))
        root = Subproblem.root(net, bounds)
        neuron = branch_select(root, net)
        if neuron is None:
            continue
        for child in split_relu(root, neuron, net):
            for k in range(1, net.n_layers + 1):
                assert np.all(child.bounds.pre_lower[k] >= bounds.pre_lower[k])
                assert np.all(child.bounds.pre_upper[k] <= bounds.pre_upper[k])


def test_infeasible_child_is_flagged():
    # g = relu(x) - 0.5 with g fixed passing leaves no room for x blocking
    net = Network((Linear([[1.0]], [0.0]), Linear([[1.0]], [-0.5]), Linear([[1.0]], [0.0])))
    bounds = interval_propagate(net, InputDomain.box([-1.0], [1.0]))
    on_g, _ = split_relu(Subproblem.root(net, bounds), (2, 0), net)
    on, off = split_relu(on_g, (1, 0), net)
    assert not on.infeasible
    assert off.infeasible


def test_branch_select_cases():
    net = relu_plus(0.0)
    bounds = interval_propagate(net, InputDomain.box([-1.0], [1.0]))
    assert branch_select(Subproblem.root(net, bounds), net) == (1, 0)
    stable = interval_propagate(net, InputDomain.box([0.5], [1.0]))
    assert branch_select(Subproblem.root(net, stable), net) is None
    twin = Network((Linear([[1.0], [1.0]], [0.0, 0.0]), Linear([[1.0, 1.0]], [0.0])))
    tb = interval_propagate(twin, InputDomain.box([-1.0], [1.0]))
    assert branch_select(Subproblem.root(twin, tb), twin) == (1, 0)
    heavy = Network((Linear([[1.0], [1.0]], [0.0, 0.0]), Linear([[1.0, 10.0]], [0.0])))
    hb = interval_propagate(heavy, InputDomain.box([-1.0], [1.0]))
    assert branch_select(Subproblem.root(heavy, hb), heavy) == (1, 1)
    scores = branch_scores(Subproblem.root(heavy, hb), heavy)
    assert scores[1][1] == pytest.approx(10 * scores[1][0])


def test_leaf_minimum_matches_oracle(rng):
    checked = 0
    for _ in range(30):
        net = random_network(rng, [2, 3, 1])
        domain = InputDomain.box([-1, -1], [1, 1])
        bounds = interval_propagate(net, domain)
        sub = Subproblem.root(net, bounds)
        stack = [sub]
        leaves = []
        while stack:
            node = stack.pop()
            pick = branch_select(node, net)
            if pick is None:
                leaves.append(node)
            else:
                stack.extend(c for c in split_relu(node, pick, net) if not c.infeasible)
        values = [v for v in (leaf_minimum(net, leaf.bounds) for leaf in leaves) if v is not None]
        best, _ = exhaustive_phase_min(net, domain)
        assert min(v for v, _ in values) == pytest.approx(best, abs=1e-7)
        for v, x0 in values:
            assert forward_eval(net, x0)[0] == pytest.approx(v, abs=1e-7)
        checked += 1
    assert checked == 30


def test_leaf_minimum_rejects_ambiguous():
    net = relu_plus(0.0)
    bounds = interval_propagate(net, InputDomain.box([-1.0], [1.0]))
    with pytest.raises(ValueError):
        leaf_minimum(net, bounds)


def test_relu_plus_one_is_verified_at_root():
    net = relu_plus(1.0)
    res = bab_verify(net, InputDomain.box([-1.0], [1.0]))
    assert res.status is Status.VERIFIED
    assert res.stats["nodes"] == 1 and res.lower_bound > 0


@pytest.mark.parametrize("method", ["bigm", "activeset", "saddlepoint"])
@pytest.mark.parametrize("stratified", [False, True])
def test_planted_counterexample_is_found(rng, method, stratified):
    domain = InputDomain.box([-1, -1], [1, 1])
    found = 0
    while found < 3:
        net = random_network(rng, [2, 4, 4, 1])
        true_min, arg = exhaustive_phase_min(net, domain)
        if np.max(np.abs(arg)) < 0.5:
            continue
        planted = shifted(net, -true_min - 0.05)
        if forward_eval(planted, domain.midpoint)[0] < 0:
            continue
        res = bab_verify(planted, domain, Budget(2000, 30), method, stratified)
        assert res.status is Status.FALSIFIED
        assert forward_eval(planted, res.counterexample)[0] < 0
        assert domain.contains(res.counterexample)
        found += 1


def test_stratified_decision_examples():
    state = StratifiedState(l_gap=2.0, ema=1.0, cost_ratio=2.0)
    sub = Subproblem(None, [], parent_lb=-4.0)
    assert stratified_decision(state, sub) is Decision.USE_TIGHT
    assert sub.hard
    assert stratified_decision(state, Subproblem(None, [], parent_lb=0.5)) is Decision.USE_LOOSE
    assert stratified_decision(StratifiedState(0.0, 1.0, cost_ratio=2.0),
                               Subproblem(None, [], parent_lb=-4.0)) is Decision.USE_LOOSE
    assert stratified_decision(StratifiedState(2.0, None), Subproblem(None, [], parent_lb=-4.0)) \
        is Decision.USE_LOOSE
    # hardness is inherited
    assert stratified_decision(StratifiedState(), Subproblem(None, [], parent_lb=1.0, hard=True)) \
        is Decision.USE_TIGHT


def test_subtree_sizes_and_ema():
    log_l, log_t = subtree_sizes(-4.0, 2.0, 1.0)
    assert log_l == pytest.approx(math.log2(31)) and log_t == pytest.approx(math.log2(7))
    big, _ = subtree_sizes(-1e6, 0.0, 1.0)
    assert math.isfinite(big)
    state = StratifiedState(decay=0.5)
    state.observe(-1.0)
    assert state.ema is None
    state.observe(2.0)
    state.observe(4.0)
    assert state.ema == pytest.approx(3.0)


def test_global_lower_bound_is_monotone_and_verified_is_sound(rng):
    domain = InputDomain.box([-1, -1], [1, 1])
    done = 0
    while done < 4:
        net = random_network(rng, [2, 5, 5, 1])
        true_min, _ = exhaustive_phase_min(net, domain)
        planted = shifted(net, -true_min + 0.05)
        res = bab_verify(planted, domain, Budget(3000, 30), "bigm", stratified=True)
        assert res.status is Status.VERIFIED
        lbs = res.stats["global_lb"]
        assert all(b >= a - 1e-12 for a, b in zip(lbs, lbs[1:]))
        low, _ = sample_min(planted, domain, 2000)
        assert low > 0
        done += 1


def test_budget_exhaustion_reports_timeout(rng):
    domain = InputDomain.box([-1, -1], [1, 1])
    while True:
        net = random_network(rng, [2, 5, 5, 1])
        true_min, _ = exhaustive_phase_min(net, domain)
        planted = shifted(net, -true_min + 1e-4)
        res = bab_verify(planted, domain, Budget(max_nodes=1), "bigm")
        if res.stats["nodes"] == 1 and res.status is not Status.VERIFIED:
            break
    assert res.status is Status.TIMEOUT
    assert res.lower_bound <= 0


def test_vector_output_is_rejected():
    net = Network((Linear([[1.0], [2.0]], [0.0, 0.0]),))
    with pytest.raises(ValueError):
        bab_verify(net, InputDomain.box([0.0], [1.0]))
