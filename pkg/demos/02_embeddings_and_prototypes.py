#!/usr/bin/env python3
"""Train an embedding net with a triplet loss, then classify with
nearest-class-mean prototypes."""

import numpy as np

from driftlab.data import gen_gaussian_clusters
from driftlab.harness import MethodConfig, train_task
from driftlab.models import EmbeddingNet
from driftlab.prototypes import PrototypeBook, compute_prototypes, ncm_classify

rng = np.random.default_rng(0)

# Six synthetic classes in 12 dimensions, gaussian blobs on the unit
# sphere. Hold out a quarter of each class for evaluation.
full = gen_gaussian_clusters(n_classes=6, per_class=80, dim=12, spread=0.25, seed=0)
mask = np.arange(len(full.labels)) % 4 == 0
holdout = full.subset(mask)
data = full.subset(~mask)

model = EmbeddingNet(input_dim=12, embedding_dim=8, hidden=(64,), seed=0)
config = MethodConfig("E-FT", epochs=20, lr=1e-3, batch_size=32,
                      embedding_dim=8, hidden=(64,), mining="random")

# Before training: embeddings are random, nearest-mean is near chance.
book = PrototypeBook()
book.add_task(compute_prototypes(model.embed_np(data.features), data.labels),
              task_index=1)
pred = ncm_classify(model.embed_np(holdout.features), book)
print("accuracy before training:", np.mean(pred == holdout.labels))

train_task(model, data, config, rng)

# Prototypes are per-class means of the (unit-norm) embeddings. They are
# not re-normalized; the classifier uses plain euclidean distance.
book = PrototypeBook()
protos = compute_prototypes(model.embed_np(data.features), data.labels)
book.add_task(protos, task_index=1)
for c in sorted(protos):
    print(f"class {c}: |prototype| = {np.linalg.norm(protos[c]):.3f}")

pred = ncm_classify(model.embed_np(holdout.features), book)
print("accuracy after training:", np.mean(pred == holdout.labels))

# Separation in the learned space: mean within-class vs between-class
# distance over the holdout set.
z = model.embed_np(holdout.features)
within, between = [], []
for i in range(len(z)):
    for j in range(i + 1, len(z)):
        d = np.linalg.norm(z[i] - z[j])
        (within if holdout.labels[i] == holdout.labels[j] else between).append(d)
print(f"mean within-class distance:  {np.mean(within):.3f}")
print(f"mean between-class distance: {np.mean(between):.3f}")
