#!/usr/bin/env python3
"""A small class-incremental benchmark: several methods over the same
task sequence, accuracy matrix metrics, and an A_k curve plot.

Uses the scikit-learn digits set when available, synthetic clusters
otherwise. Takes about half a minute.
"""

import numpy as np

from driftlab.data import LabeledDataset, gen_gaussian_clusters
from driftlab.harness import (
    MethodConfig,
    avg_forgetting,
    avg_incremental_accuracy,
    run_sequence,
    split_tasks,
)
from driftlab.svgplot import curves_figure

try:
    from sklearn.datasets import load_digits
    bunch = load_digits()
    data = LabeledDataset(bunch.data.astype(np.float64) / 16.0,
                          bunch.target.astype(np.int64))
    print("dataset: digits (1797 samples, 10 classes)")
except ImportError:
    data = gen_gaussian_clusters(n_classes=10, per_class=150, dim=32,
                                 spread=0.25, seed=0)
    print("dataset: synthetic clusters")

N_TASKS = 5
SEED = 0
sequence = split_tasks(data, N_TASKS, seed=SEED)
print("task classes:", [t.classes for t in sequence.tasks])

base = dict(epochs=30, lr=5e-5, batch_size=64, embedding_dim=64,
            hidden=(128,), mining="random", seed=SEED)

runs = {}
for label, extra in [
    ("FT", {}),                       # growing softmax heads, no protection
    ("E-FT", {}),                     # embedding + saved prototypes
    ("E-FT+SDC", {"sdc": True}),      # same, with drift-compensated prototypes
    ("E-Fix", {}),                    # freeze after the first task
    ("Joint", {}),                    # upper bound: all data at once
]:
    method = label.split("+")[0]
    cfg = MethodConfig(method, **{**base, **extra})
    runs[label] = run_sequence(cfg, sequence)
    print(f"ran {label:10s} in {runs[label].wall_time:5.1f}s")

print()
print(f"{'method':12s}" + "".join(f"     A_{k}" for k in range(1, N_TASKS + 1)))
for label, rec in runs.items():
    cells = []
    for k in range(1, N_TASKS + 1):
        try:
            cells.append(f"{avg_incremental_accuracy(rec, k):8.3f}")
        except ValueError:
            cells.append(f"{'-':>8s}")  # Joint evaluates once, at the end
    print(f"{label:12s}" + "".join(cells))

print()
for label in ("FT", "E-FT", "E-FT+SDC"):
    f = avg_forgetting(runs[label], N_TASKS)
    print(f"forgetting F_{N_TASKS} {label:10s} {f:.3f}")

series = []
for label, rec in runs.items():
    pts = []
    for k in range(1, N_TASKS + 1):
        try:
            pts.append((k, avg_incremental_accuracy(rec, k)))
        except ValueError:
            pass
    series.append((label, pts))
with open("benchmark_curves.svg", "w") as f:
    f.write(curves_figure(series, title="class-incremental digits"))
print("wrote benchmark_curves.svg")
