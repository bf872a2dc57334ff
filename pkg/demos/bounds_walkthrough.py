"""
Bounding a small ReLU network, step by step
===========================================

A two-input network with two hidden layers of two neurons each. We compute
interval bounds, tighten the hidden layers with the Big-M dual, then bound the
output with each method in turn.
"""

import numpy as np

from relaxbound import InputDomain, example_network
from relaxbound.activeset import ActiveSetConfig, activeset_solve
from relaxbound.bigm import bigm_solve
from relaxbound.optim import LinearSchedule
from relaxbound.relaxation import BigMDual, intermediate_bounds, interval_propagate
from relaxbound.saddlepoint import SaddlePointConfig, saddlepoint_solve
from relaxbound.testing.oracles import grid_min

np.set_printoptions(precision=4, suppress=True)

net = example_network()
domain = InputDomain.box([-1.0, -1.0], [1.0, 1.0])

# Interval arithmetic is cheap but loose: each layer forgets how its inputs are correlated.
interval = interval_propagate(net, domain)
for k in range(1, net.n_layers + 1):
    print(f"interval  layer {k}: [{interval.pre_lower[k]}, {interval.pre_upper[k]}]")

# Bounding every hidden neuron with the Big-M dual tightens the second layer noticeably.
bounds = intermediate_bounds(net, domain, BigMDual(2000))
for k in range(1, net.n_layers):
    print(f"big-m     layer {k}: [{bounds.pre_lower[k]}, {bounds.pre_upper[k]}]")

# Output lower bounds. Each one is a certificate: no input in the box goes lower.
bigm = bigm_solve(net, bounds, 1000)
# On a problem this small a larger Active Set step converges much faster than the default.
active = activeset_solve(net, bounds, ActiveSetConfig(init_iters=1000, iters=3000, omega=200,
                                                      schedule=LinearSchedule(1e-2, 1e-4)))
saddle = saddlepoint_solve(net, bounds, SaddlePointConfig(init="activeset", init_iters=1000))
print(f"Big-M        {bigm.bound:.5f}")
print(f"Active Set   {active.bound:.5f}  ({sum(active.state.index.count(k) for k in (1, 2))} masks)")
print(f"Saddle Point {saddle.bound:.5f}")

# The true minimum, found by brute force, sits above every bound.
value, arg = grid_min(net, domain)
print(f"grid minimum {value:.5f} at {arg}")
