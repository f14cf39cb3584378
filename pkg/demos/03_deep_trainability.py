#!/usr/bin/env python3
"""Deep-network trainability: balanced vs Xavier initialization, desk scale.

Trains an 8-layer GAT on a synthetic three-community graph with plain
gradient descent and compares test accuracy, layer-1 relative gradient
norms, and the fraction of significant feature weights that actually move
during training. Runs in about a minute.
"""

import numpy as np

from gatflow import (InitSpec, NetworkConfig, TrainConfig, gen_sbm,
                     param_change_stats, train)

ds = gen_sbm([50, 50, 50], p_in=0.3, p_out=0.02, feat_dim=16, seed=0)
config = NetworkConfig(widths=(16,) + (32,) * 7 + (3,))
print(f"dataset: {ds.num_nodes} nodes, {ds.graph.num_edges} directed edges, "
      f"{ds.num_features} features, {ds.num_classes} classes")
print(f"network: L={config.depth}, hidden width 32, GD lr 0.05, 800 epochs\n")

histories = {}
for scheme in ("xavier", "bal_llortho"):
    histories[scheme] = train(ds, config, InitSpec(scheme=scheme, seed=0),
                              TrainConfig(optimizer="gd", lr=0.05, max_epochs=800,
                                          diag_every=25, seed=0))

print(f"{'':14s}{'final loss':>12s}{'test acc':>10s}{'best epoch':>12s}")
for scheme, h in histories.items():
    print(f"{scheme:14s}{h.train_loss[-1]:12.4f}{h.best_test_acc:10.3f}"
          f"{h.best_epoch:12d}")

print("\nlayer-1 relative feature-gradient norm, every 100 epochs:")
header = "".join(f"{e:>10d}" for e in range(100, 801, 100))
print(f"{'':14s}{header}")
for scheme, h in histories.items():
    by_epoch = {rec.epoch: rec.rel_grad_w[0] for rec in h.diagnostics}
    row = "".join(f"{by_epoch.get(e, float('nan')):10.1e}" for e in range(100, 801, 100))
    print(f"{scheme:14s}{row}")

print("\nfraction of significant feature weights with relative change > 0.5:")
print(f"{'':14s}" + "".join(f"{f'W^{l}':>8s}" for l in range(1, config.depth + 1)))
for scheme, h in histories.items():
    stats = param_change_stats(h.init_params, h.best_params, change_threshold=0.5)
    row = "".join(f"{s.feature_change_fraction:8.2f}" for s in stats)
    print(f"{scheme:14s}{row}")

print("\nwith the unbalanced start, gradients reaching the early layers are")
print("orders of magnitude smaller and most weights barely move; balancing")
print("restores gradient flow and the deep network trains to high accuracy.")
