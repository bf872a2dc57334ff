"""
Anytime behaviour of the dual solvers
=====================================

Every iterate of every solver is a valid bound, so the solvers can be stopped
at any time. Here we track the best bound so far on a random network and print
how it evolves with the iteration count and wall time.
"""

import time

import numpy as np

from relaxbound import InputDomain, random_network
from relaxbound.activeset import ActiveSetConfig, activeset_solve
from relaxbound.bigm import bigm_solve
from relaxbound.relaxation import intermediate_bounds, BigMDual
from relaxbound.saddlepoint import SaddlePointConfig, saddlepoint_solve
from relaxbound.testing.oracles import sample_min

rng = np.random.default_rng(0)
net = random_network(rng, [6, 32, 32, 32, 1])
domain = InputDomain.linf_ball(np.zeros(6), 0.5)
bounds = intermediate_bounds(net, domain, BigMDual(50))

runs = {}
t0 = time.perf_counter()
runs["bigm"] = bigm_solve(net, bounds, 1000)
runs["bigm"].info["seconds"] = time.perf_counter() - t0

t0 = time.perf_counter()
runs["activeset"] = activeset_solve(net, bounds, ActiveSetConfig(init_iters=500, iters=500, omega=100))
runs["activeset"].info["seconds"] = time.perf_counter() - t0

t0 = time.perf_counter()
sp = saddlepoint_solve(net, bounds, SaddlePointConfig(init_iters=500, iters=500))
sp.info["seconds"] = time.perf_counter() - t0
runs["saddlepoint"] = sp

# Saddle Point's own history starts after its Big-M initialisation.
curves = {name: np.maximum.accumulate(r.history) for name, r in runs.items()}
curves["saddlepoint"] = np.maximum.accumulate(sp.info["init"].history + sp.history)

print(f"{'iteration':>10}" + "".join(f"{name:>14}" for name in curves))
for it in (0, 100, 250, 500, 750, 1000):
    cells = []
    for curve in curves.values():
        cells.append(f"{curve[min(it, len(curve) - 1)]:14.4f}")
    print(f"{it:>10}" + "".join(cells))

print("\nwall time (s): " + ", ".join(f"{n} {r.info['seconds']:.2f}" for n, r in runs.items()))

# Sampling gives an upper bound on the true minimum; the gap to the best dual bound
# is what branch and bound would have to close.
low, _ = sample_min(net, domain, 5000)
print(f"best sampled output {low:.4f}")
