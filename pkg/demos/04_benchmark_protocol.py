#!/usr/bin/env python3
"""Benchmark-style protocol on an exported citation dataset (long-running).

Usage: python demos/04_benchmark_protocol.py DATASET_DIR [DEPTH] [RUNS]

DATASET_DIR must hold the on-disk format (edges.tsv, features.csv,
labels.txt, splits/). Trains width-64 GATs of the given depth with plain
gradient descent for up to 5000 epochs (learning rate 0.1 for L<=5, 0.05
for L<=20, 0.005 for L=40), selecting the best-validation state, and
reports mean +/- 95% CI over the runs for Xavier vs the balanced
initializations. On citation-scale graphs this takes hours.
"""

import sys

import numpy as np
from scipy import stats

from gatflow import InitSpec, NetworkConfig, TrainConfig, load_dataset, train

if len(sys.argv) < 2:
    sys.exit(__doc__)
ds = load_dataset(sys.argv[1])
depth = int(sys.argv[2]) if len(sys.argv) > 2 else 10
runs = int(sys.argv[3]) if len(sys.argv) > 3 else 5

lr = 0.1 if depth <= 5 else (0.05 if depth <= 20 else 0.005)
config = NetworkConfig(widths=(ds.num_features,) + (64,) * (depth - 1) + (ds.num_classes,))
print(f"{ds.num_nodes} nodes, {ds.num_features} features, {ds.num_classes} classes; "
      f"L={depth}, width 64, GD lr {lr}, {runs} runs\n")

for scheme in ("xavier", "bal_xavier", "bal_llortho"):
    accs, epochs = [], []
    for seed in range(runs):
        h = train(ds, config, InitSpec(scheme=scheme, seed=seed),
                  TrainConfig(optimizer="gd", lr=lr, max_epochs=5000, seed=seed))
        accs.append(h.best_test_acc)
        epochs.append(h.best_epoch)
        print(f"  {scheme} seed {seed}: test {h.best_test_acc:.3f} "
              f"best epoch {h.best_epoch}", flush=True)
    t = stats.t.ppf(0.975, runs - 1) if runs > 1 else 0.0
    half = t * np.std(accs, ddof=1) / np.sqrt(runs) if runs > 1 else 0.0
    print(f"{scheme}: test accuracy {np.mean(accs):.3f} +/- {half:.3f}, "
          f"epochs to best {np.mean(epochs):.0f}\n")
