#!/usr/bin/env python3
"""Why Xavier is unbalanced, and how the balancing procedure fixes it.

With fan-based Xavier, the expected squared row norm of layer l is
2*n_l/(n_l + n_{l-1}): close to 1 for equal-width hidden layers but tiny
for the final layer, whose output dimension (number of classes) is far
below the hidden width. The per-neuron conserved quantity c is therefore
materially nonzero, and the small outgoing norms cap how much the large
incoming weights can move. Balancing rescales rows/columns (attention
zeroed) so c = 0 exactly at every neuron.
"""

import numpy as np

from gatflow import InitSpec, NetworkConfig, balance, initialize, xavier
from gatflow.conservation import c_array
from gatflow.initializers import ll_structure

config = NetworkConfig(widths=(1433,) + (64,) * 9 + (7,))

print("=== Xavier norms across a deep network (L=10, width 64) ===")
net = xavier(config, seed=0)
for layer in (1, 2, 9, 10):
    rows = np.sum(net.w_src(layer) ** 2, axis=1)
    fan_in, fan_out = config.widths[layer - 1], config.widths[layer]
    expected = 2 * fan_in / (fan_in + fan_out)
    print(f"layer {layer:2d}: mean row norm^2 = {rows.mean():.4f} "
          f"(expected {expected:.4f})")
cols = np.sum(net.w_src(10) ** 2, axis=0)
print(f"last-layer column norm^2: mean {cols.mean():.4f} << 1  <- the bottleneck")
print("per-layer mean |c| under Xavier:",
      " ".join(f"{np.mean(np.abs(c_array(net, layer))):.3f}" for layer in (1, 5, 9)))

print("\n=== Procedure-1 balancing drives every c to zero ===")
balanced = balance(net, beta=2.0)
print("per-layer max |c| after balancing:",
      " ".join(f"{np.max(np.abs(c_array(balanced, layer))):.2e}" for layer in (1, 5, 9)))
print("first-layer row norms^2:",
      f"{np.sum(balanced.w_src(1) ** 2, axis=1).mean():.6f} (= beta)")
print("directions preserved: cosine(first row before/after) =",
      f"{np.dot(net.w_src(1)[0], balanced.w_src(1)[0]) / (np.linalg.norm(net.w_src(1)[0]) * np.linalg.norm(balanced.w_src(1)[0])):.12f}")

print("\n=== the looks-linear orthogonal structure ===")
small = NetworkConfig(widths=(32, 16, 16, 16, 2))
raw = ll_structure(small, seed=1)
w2 = raw.w_src(2)
print("hidden layer = [[U, -U], [-U, U]] with orthonormal-rowed U:")
print(f"  row norms^2:    {np.sum(w2 ** 2, axis=1)[:4]}")
print(f"  column norms^2: {np.sum(w2 ** 2, axis=0)[:4]}")
u = w2[:8, :8]
print(f"  |U U^T - I|_max = {np.max(np.abs(u @ u.T - np.eye(8))):.2e}")
print(f"  mirror blocks:  top-left == -top-right is {np.array_equal(w2[:8, :8], -w2[:8, 8:])}")

bal_o = initialize(small, InitSpec(scheme="bal_llortho", seed=1))
print("after balancing with beta = 2:")
print(f"  first-layer row norms^2  = {np.sum(bal_o.w_src(1) ** 2, axis=1)[:4]}")
print(f"  last-layer column norms^2 = {np.sum(bal_o.w_src(4) ** 2, axis=0)[:4]}")
print(f"  max |c| = {max(np.max(np.abs(c_array(bal_o, layer))) for layer in (1, 2, 3)):.2e}")

print("\n=== identity-based variants (appendix-style) ===")
for kind in ("identity", "ll_identity"):
    net = initialize(NetworkConfig(widths=(32, 16, 16, 16, 2)), InitSpec(scheme=kind, seed=2))
    hidden = net.w_src(2)
    print(f"{kind:12s}: hidden row norm^2 = {np.sum(hidden ** 2, axis=1)[0]:.1f}, "
          f"first-layer row norm^2 = {np.sum(net.w_src(1) ** 2, axis=1)[0]:.1f}, "
          f"max |c| = {max(np.max(np.abs(c_array(net, layer))) for layer in (1, 2, 3)):.2e}")
