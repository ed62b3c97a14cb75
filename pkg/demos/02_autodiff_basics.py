#!/usr/bin/env python3
"""Tour of the built-in reverse-mode autodiff engine.

The training loop runs entirely on these operations: grouped 1-D
convolution, 1x1 channel mixing, sliding squared-L2 distance, temporal max
pooling, and a dense head. Every gradient can be verified against central
finite differences.
"""

import numpy as np

from prototsnet import Tensor, finite_diff_check
from prototsnet import autodiff as ad

rng = np.random.default_rng(0)

# --- a tensor that wants gradients -------------------------------------------
x = Tensor(rng.normal(size=(1, 2, 8)), requires_grad=True)   # [batch, channels, time]
weight = Tensor(rng.normal(size=(2, 1, 3)), requires_grad=True)
bias = Tensor(np.zeros(2), requires_grad=True)

# grouped convolution: group 0 sees channel 0 only, group 1 sees channel 1
y = ad.grouped_conv1d(x, weight, bias, groups=2)
print(f"conv output shape {y.shape} (length preserved by symmetric padding)")

loss = ad.mean_all(ad.relu(y))
loss.backward()
print(f"loss {loss.item():.4f}; grad shapes: x {x.grad.shape}, w {weight.grad.shape}")

# --- the graph is consumed once ----------------------------------------------
try:
    loss.backward()
except RuntimeError as exc:
    print(f"second backward correctly rejected: {exc}")

# --- sliding distances and the similarity transform --------------------------
z = Tensor(rng.normal(size=(1, 3, 12)))          # a latent series
protos = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
dist = ad.sliding_sq_l2(z, protos)               # [1, 2, 9] squared distances
sim_map = ad.log_ratio(dist, 1e-4)               # log((d+1)/(d+eps))
sim, offsets = ad.max_over_time(sim_map)
print(f"\nbest similarity per prototype {np.round(sim.data[0], 4)} at offsets {offsets[0]}")

# --- checking gradients numerically -------------------------------------------
def head_loss(p):
    d = ad.sliding_sq_l2(z, p)
    values, _ = ad.max_over_time(ad.log_ratio(d, 1e-4))
    return ad.sum_all(values)

err = finite_diff_check(head_loss, protos, step=1e-5)
print(f"max relative error vs central differences: {err:.2e}")
assert err < 1e-4
