import numpy as np
import pytest

from relaxbound.network import InputDomain, Linear, random_network
from relaxbound.relaxation import (BigMDual, IntervalOnly, LayerBounds, anderson_violation, bigm_violation,
                                   check_matrices, intermediate_bounds, interval_propagate,
                                   oracle_most_violated)
from relaxbound.testing.oracles import dense_checks, exhaustive_best_mask

from conftest import small_problem


def test_example_interval_bounds(example):
    net, domain, bounds = example
    assert bounds.pre_lower[1].tolist() == [-3.0, -1.0]
    assert bounds.pre_upper[1].tolist() == [1.0, 3.0]
    assert bounds.post_lower(1).tolist() == [0.0, 0.0]
    assert bounds.post_upper(1).tolist() == [1.0, 3.0]
    assert bounds.pre_upper[2][1] == 3.0


def test_zero_radius_domain_collapses_to_trace(rng):
    net = random_network(rng, [4, 6, 5, 1])
    x0 = rng.normal(size=4)
    bounds = interval_propagate(net, InputDomain.linf_ball(x0, 0.0))
    for k, (pre, _) in enumerate(net.trace(x0), start=1):
        np.testing.assert_allclose(bounds.pre_lower[k], pre, atol=1e-12)
        np.testing.assert_allclose(bounds.pre_upper[k], pre, atol=1e-12)


def test_interval_bounds_contain_sampled_activations(rng):
    for _ in range(5):
        net, domain, bounds = small_problem(rng, (3, 6, 6, 2))
        for x0 in domain.sample(rng, 200):
            for k, (pre, _) in enumerate(net.trace(x0), start=1):
                assert np.all(pre >= bounds.pre_lower[k] - 1e-12)
                assert np.all(pre <= bounds.pre_upper[k] + 1e-12)


def test_interval_only_equals_propagation(example):
    net, domain, bounds = example
    same = intermediate_bounds(net, domain, IntervalOnly())
    for a, b in zip(same.pre_lower + same.pre_upper, bounds.pre_lower + bounds.pre_upper):
        np.testing.assert_array_equal(a, b)


def test_refined_example_upper_bound(example):
    net, domain, interval = example
    refined = intermediate_bounds(net, domain, BigMDual(3000))
    assert refined.pre_upper[2][1] == pytest.approx(2.25, abs=0.05)
    for k in range(1, net.n_layers + 1):
        assert np.all(refined.pre_lower[k] >= interval.pre_lower[k])
        assert np.all(refined.pre_upper[k] <= interval.pre_upper[k])


def test_refined_bounds_remain_sound(rng):
    net, domain, _ = small_problem(rng, (2, 5, 5, 1))
    refined = intermediate_bounds(net, domain, BigMDual(200))
    for x0 in domain.sample(rng, 500):
        for k, (pre, _) in enumerate(net.trace(x0), start=1):
            assert np.all(pre >= refined.pre_lower[k] - 1e-9)
            assert np.all(pre <= refined.pre_upper[k] + 1e-9)


def test_bounds_json_round_trip(example):
    _, _, bounds = example
    again = LayerBounds.from_json(bounds.to_json())
    for a, b in zip(again.pre_lower, bounds.pre_lower):
        np.testing.assert_array_equal(a, b)
    assert bounds.to_json()["layers"][1]["post_upper"] == [1.0, 3.0]


def test_check_matrices_sign_rule():
    checks = check_matrices(np.array([[-2.0, 1.0]]), np.array([0.0, 0.0]), np.array([1.0, 3.0]))
    assert checks.L_check.tolist() == [[1.0, 0.0]]
    assert checks.U_check.tolist() == [[0.0, 3.0]]


def test_check_matrices_positive_weights_and_zero_tie(rng):
    l, u = rng.normal(size=3) - 2, rng.normal(size=3) + 2
    checks = check_matrices(np.abs(rng.normal(size=(2, 3))), l, u)
    np.testing.assert_array_equal(checks.L_check, np.broadcast_to(l, (2, 3)))
    np.testing.assert_array_equal(checks.U_check, np.broadcast_to(u, (2, 3)))
    tie = check_matrices(np.array([[0.0, -1.0]]), l[:2], u[:2])
    assert tie.L_check[0, 0] == l[0]


def test_check_matrices_pair_sums_and_determinism(rng):
    W = rng.normal(size=(4, 5))
    l, u = -rng.random(5), rng.random(5)
    a, b = check_matrices(W, l, u), check_matrices(W, l, u)
    np.testing.assert_array_equal(a.L_check, b.L_check)
    np.testing.assert_allclose(a.L_check + a.U_check, np.broadcast_to(l + u, (4, 5)))
    L, U = dense_checks(W, l, u)
    np.testing.assert_array_equal(a.L_check, L)
    np.testing.assert_array_equal(a.U_check, U)


def test_oracle_extreme_rows(rng):
    W = np.abs(rng.normal(size=(1, 4)))
    l, u = np.zeros(4), np.ones(4)
    checks = check_matrices(W, l, u)
    assert oracle_most_violated(W, None, checks, l, np.zeros(1), np.ones(1)).all()
    assert not oracle_most_violated(W, None, checks, u, np.zeros(1), np.zeros(1)).any()


def test_oracle_attains_exhaustive_maximum(rng):
    for _ in range(20):
        W = rng.normal(size=(1, 8))
        b = rng.normal(size=1)
        l, u = rng.random(8) * 0.5, 0.5 + rng.random(8)
        checks = check_matrices(W, l, u)
        x_prev, x, z = rng.uniform(l, u), rng.random(1), rng.random(1)
        mask = oracle_most_violated(W, b, checks, x_prev, x, z)
        got = anderson_violation(W, b, checks, mask, x_prev, x, z)[0]
        _, best = exhaustive_best_mask(W[0], (checks.L_check[0], checks.U_check[0]), x_prev, x[0], z[0], b[0])
        assert got == pytest.approx(best, abs=1e-12)


def test_anderson_violation_special_cases(rng):
    W, b = rng.normal(size=(3, 4)), rng.normal(size=3)
    l, u = -rng.random(4), rng.random(4)
    checks = check_matrices(W, l, u)
    x_prev, z = rng.uniform(l, u), np.ones(3)
    ones = np.ones((3, 4), bool)
    x = rng.normal(size=3)
    np.testing.assert_allclose(anderson_violation(W, b, checks, ones, x_prev, x, z), x - (W @ x_prev + b))
    mask = rng.random((3, 4)) < 0.5
    zeros = np.zeros(3)
    rhs = zeros - anderson_violation(W, b, checks, mask, x_prev, zeros, z)
    np.testing.assert_allclose(anderson_violation(W, b, checks, mask, x_prev, rhs, z), 0.0, atol=1e-12)


def test_example_single_input_constraint(example):
    net, _, bounds = example
    layer = net.layers[1]
    checks = check_matrices(layer, bounds.post_lower(1), bounds.post_upper(1))
    mask = np.array([[False, False], [False, True]])
    x1 = np.array([0.0, 3.0])
    x2 = np.array([0.0, 1.7])
    res = anderson_violation(layer, None, checks, mask, x1, x2, np.array([1.0, 1.0]))
    assert res[1] == pytest.approx(1.7 - 3.0)


def test_bigm_violation_rows(rng):
    W, b = rng.normal(size=(2, 3)), rng.normal(size=2)
    xp, x, z = rng.normal(size=3), rng.normal(size=2), rng.random(2)
    lo, hi = -np.ones(2), np.ones(2)
    v0, v1 = bigm_violation(W, b, lo, hi, xp, x, z)
    np.testing.assert_allclose(v0, x - z * hi)
    np.testing.assert_allclose(v1, x - (W @ xp + b) + (1 - z) * lo)
