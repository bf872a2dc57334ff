"""
Masked passes through a convolution
===================================

The exponential family of constraints is indexed by 0/1 masks over each
neuron's incoming weights. For a convolution those weights are shared, so a
mask has one entry per (output position, output channel, patch element). The
masked products are computed with unfold/fold instead of a dense matrix.
"""

import numpy as np

from relaxbound.network import Conv2d, dense_mask, masked_backward, masked_forward

rng = np.random.default_rng(3)
conv = Conv2d(rng.normal(size=(2, 1, 3, 3)), rng.normal(size=2), (1, 5, 5), stride=1, padding=1)
print(f"input {conv.in_shape} -> output {conv.out_shape}, mask shape {conv.mask_shape}")

x = rng.normal(size=conv.in_size)
y = rng.normal(size=conv.out_size)

# An all-ones mask recovers the plain (bias-free) convolution.
full = np.ones(conv.mask_shape, dtype=bool)
print("all-ones mask equals conv:", np.allclose(masked_forward(conv, full, x), conv.linear(x)))

# A random mask keeps each weight at each position independently.
mask = rng.random(conv.mask_shape) < 0.5
dense = conv.dense() * dense_mask(conv, mask)
print("masked forward vs dense:", np.abs(masked_forward(conv, mask, x) - dense @ x).max())
print("masked backward vs dense:", np.abs(masked_backward(conv, mask, y) - dense.T @ y).max())

# The two passes are adjoint, which is what the dual solvers rely on.
lhs = masked_forward(conv, mask, x) @ y
rhs = x @ masked_backward(conv, mask, y)
print(f"<Mx, y> = {lhs:.12f}, <x, M'y> = {rhs:.12f}")
