"""
Proving and refuting a property with branch and bound
=====================================================

A property in canonical form asks whether a scalar output stays positive over
a box. We shift a random network's output so that the answer is known, then let
branch and bound decide it with and without stratified bounding.
"""

import numpy as np

from relaxbound import InputDomain, random_network
from relaxbound.bab import Budget, bab_verify
from relaxbound.network import Linear, Network, forward_eval
from relaxbound.testing.oracles import exhaustive_phase_min

rng = np.random.default_rng(11)
domain = InputDomain.box([-1.0, -1.0], [1.0, 1.0])
net = random_network(rng, [2, 5, 5, 1])

# Enumerating every activation pattern gives the exact minimum (10 neurons, 1024 LPs).
true_min, argmin = exhaustive_phase_min(net, domain)
print(f"exact minimum {true_min:.4f} at {argmin}")


def shifted(offset):
    last = net.layers[-1]
    return Network(net.layers[:-1] + (Linear(last.weight, last.bias + offset),))


# Lift the output just above zero: the property holds, but only barely.
safe = shifted(-true_min + 0.02)
# Push it just below: a counterexample exists near the argmin.
unsafe = shifted(-true_min - 0.02)

for label, target in (("safe", safe), ("unsafe", unsafe)):
    for stratified in (False, True):
        res = bab_verify(target, domain, Budget(5000, 30), "activeset", stratified)
        s = res.stats
        line = (f"{label:>6}  stratified={stratified!s:5}  {res.status.value:9}  nodes={s['nodes']:4d}  "
                f"loose={s['bounds']['loose']:4d}  tight={s['bounds']['tight']:4d}  {s['time_s']:.2f}s")
        if res.counterexample is not None:
            line += f"  witness output {forward_eval(target, res.counterexample)[0]:.4f}"
        print(line)
