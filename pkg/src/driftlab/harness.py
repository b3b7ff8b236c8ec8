"""Class-incremental experiment driver.

A run takes a task sequence (disjoint class groups with train/test data)
and a method configuration, trains task by task, maintains prototypes and
their compensation, and fills the lower-triangular accuracy matrix
a[k][j]: accuracy on task j's test data after training task k. Everything
downstream (metrics, plots, tables) reads the RunRecord this produces.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .losses import (
    ImportanceMap,
    combined_loss,
    cross_entropy_loss,
    estimate_fisher,
    estimate_mas_importance,
    lwf_align_loss,
    mine_triplets,
    quadratic_penalty,
    triplet_loss,
)
from .models import EmbeddingNet, GrowingSoftmaxNet, snapshot
from .optim import Adam
from .prototypes import (
    KernelConfig,
    PrototypeBook,
    collect_drift,
    compensate,
    compute_prototypes,
    ncm_classify,
)

EMBEDDING_METHODS = ("E-FT", "E-LwF", "E-EWC", "E-MAS", "E-Fix", "E-Pre-substitute", "Joint")
SOFTMAX_METHODS = ("FT", "FT*")
METHODS = EMBEDDING_METHODS + SOFTMAX_METHODS

GAMMA_DEFAULTS = {"E-LwF": 1.0, "E-EWC": 1e7, "E-MAS": 1e6}


class TrainingError(RuntimeError):
    """A task could not be trained (no usable triplets, missing data)."""


@dataclass
class Task:
    index: int  # 1-based position in the sequence
    classes: tuple[int, ...]
    train: LabeledDataset
    test: LabeledDataset


@dataclass
class TaskSequence:
    tasks: list[Task]

    def __post_init__(self):
        seen: set[int] = set()
        for t in self.tasks:
            overlap = seen & set(t.classes)
            if overlap:
                raise ValueError(f"classes {sorted(overlap)} appear in two tasks")
            seen |= set(t.classes)

    def __len__(self):
        return len(self.tasks)

    @property
    def input_dim(self) -> int:
        return self.tasks[0].train.features.shape[1]


def split_tasks(dataset: LabeledDataset, n_tasks: int, first_task_fraction=None,
                seed: int = 0, test: LabeledDataset | None = None,
                test_fraction: float = 0.2) -> TaskSequence:
    """Partition classes into disjoint tasks with a seeded random order.

    The first task optionally takes ``first_task_fraction`` of the classes;
    the rest must divide evenly over the remaining tasks. With no separate
    ``test`` set, ``test_fraction`` of each class is held out (seeded).
    """
    classes = np.unique(dataset.labels)
    if n_tasks > len(classes):
        raise ValueError(f"{n_tasks} tasks but only {len(classes)} classes")
    rng = np.random.default_rng(seed)
    order = rng.permutation(classes)

    if first_task_fraction:
        n_first = int(round(first_task_fraction * len(classes)))
        if not 1 <= n_first <= len(classes) - (n_tasks - 1):
            raise ValueError(f"first task of {n_first} classes leaves too few behind")
        rest = len(classes) - n_first
        if rest % (n_tasks - 1):
            raise ValueError(
                f"{rest} remaining classes do not divide over {n_tasks - 1} tasks"
            )
        per = rest // (n_tasks - 1)
        groups = [tuple(order[:n_first])]
        groups += [tuple(order[n_first + i * per : n_first + (i + 1) * per])
                   for i in range(n_tasks - 1)]
    else:
        if len(classes) % n_tasks:
            raise ValueError(f"{len(classes)} classes do not divide into {n_tasks} tasks")
        per = len(classes) // n_tasks
        groups = [tuple(order[i * per : (i + 1) * per]) for i in range(n_tasks)]

    if test is None:
        train_idx, test_idx = [], []
        for c in classes:
            rows = np.flatnonzero(dataset.labels == c)
            rows = rows[rng.permutation(len(rows))]
            cut = max(1, int(round(test_fraction * len(rows))))
            test_idx.extend(rows[:cut])
            train_idx.extend(rows[cut:])
        train_ds = dataset.subset(np.array(sorted(train_idx)))
        test_ds = dataset.subset(np.array(sorted(test_idx)))
    else:
        train_ds, test_ds = dataset, test

    tasks = []
    for i, group in enumerate(groups, start=1):
        tr_mask = np.isin(train_ds.labels, group)
        te_mask = np.isin(test_ds.labels, group)
        tasks.append(Task(
            index=i,
            classes=tuple(int(c) for c in group),
            train=train_ds.subset(tr_mask),
            test=test_ds.subset(te_mask),
        ))
    return TaskSequence(tasks)


@dataclass
class MethodConfig:
    method: str
    sdc: bool = False
    gamma: float | None = None
    sigma: float = 0.3
    margin: float = 0.2
    lr: float = 1e-4
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0
    embedding_dim: int = 64
    hidden: tuple = (256, 256)
    mining: str = "semihard"
    renormalize_prototypes: bool = False
    importance_mode: str = "accumulate"
    fisher_variant: str = "triplet"
    weight_floor: float = 1e-12

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; pick from {METHODS}")
        if self.sdc and (self.method in SOFTMAX_METHODS or self.method == "Joint"):
            raise ValueError(f"sdc is only valid for incremental embedding methods, "
                             f"not {self.method}")
        if self.importance_mode not in ("accumulate", "latest"):
            raise ValueError(f"unknown importance_mode {self.importance_mode!r}")
        if self.mining not in ("random", "semihard"):
            raise ValueError(f"unknown mining strategy {self.mining!r}")
        if self.gamma is None:
            self.gamma = GAMMA_DEFAULTS.get(self.method, 0.0)
        if self.method not in GAMMA_DEFAULTS:
            self.gamma = 0.0  # ignored for methods without a regularizer
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class RunRecord:
    method: str
    seed: int
    n_tasks: int
    task_classes: list[tuple[int, ...]]
    accuracy: dict = field(default_factory=dict)  # {k: {j: acc}}
    proto_distance: dict = field(default_factory=dict)  # {k: {class: dist}}
    confusions: dict = field(default_factory=dict)  # {k: {"classes": [...], "counts": [[...]]}}
    sdc_events: dict = field(default_factory=dict)  # {k: {class: {"before": [...], "delta": [...]}}}
    embed2d: dict = field(default_factory=dict)  # {k: plotting payload}, 2-d runs only
    param_digest: dict = field(default_factory=dict)  # {k: sha256 of all params}
    wall_time: float = 0.0
    config: dict = field(default_factory=dict)

    def set_acc(self, k: int, j: int, value: float):
        if not (0.0 <= value <= 1.0):
            raise ValueError(f"accuracy {value} outside [0, 1]")
        if j > k:
            raise ValueError(f"a[{k}][{j}] above the diagonal")
        self.accuracy.setdefault(k, {})[j] = float(value)

    def a_matrix_csv(self) -> str:
        lines = ["k,j,accuracy"]
        for k in sorted(self.accuracy):
            for j in sorted(self.accuracy[k]):
                lines.append(f"{k},{j},{self.accuracy[k][j]!r}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "method": self.method,
            "seed": self.seed,
            "n_tasks": self.n_tasks,
            "task_classes": [list(c) for c in self.task_classes],
            "accuracy": {str(k): v for k, v in self.accuracy.items()},
            "proto_distance": self.proto_distance,
            "confusions": self.confusions,
            "sdc_events": self.sdc_events,
            "embed2d": self.embed2d,
            "param_digest": self.param_digest,
            "wall_time": self.wall_time,
            "config": self.config,
        }
        return json.dumps(payload, indent=1, default=_jsonable)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        raw = json.loads(text)
        rec = cls(
            method=raw["method"], seed=raw["seed"], n_tasks=raw["n_tasks"],
            task_classes=[tuple(c) for c in raw["task_classes"]],
            wall_time=raw.get("wall_time", 0.0), config=raw.get("config", {}),
        )
        rec.accuracy = {int(k): {int(j): a for j, a in row.items()}
                        for k, row in raw["accuracy"].items()}
        rec.proto_distance = {int(k): {int(c): d for c, d in row.items()}
                              for k, row in raw.get("proto_distance", {}).items()}
        rec.confusions = {int(k): v for k, v in raw.get("confusions", {}).items()}
        rec.sdc_events = {int(k): {int(c): e for c, e in row.items()}
                          for k, row in raw.get("sdc_events", {}).items()}
        rec.embed2d = {int(k): v for k, v in raw.get("embed2d", {}).items()}
        rec.param_digest = {int(k): v for k, v in raw.get("param_digest", {}).items()}
        return rec


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"cannot serialize {type(obj)}")


def avg_incremental_accuracy(record: RunRecord, k: int) -> float:
    """A_k: mean over tasks 1..k of a[k][j]."""
    row = record.accuracy.get(k, {})
    missing = [j for j in range(1, k + 1) if j not in row]
    if missing:
        raise ValueError(f"row {k} incomplete: missing tasks {missing}")
    return sum(row[j] for j in range(1, k + 1)) / k


def avg_forgetting(record: RunRecord, k: int) -> float:
    """F_k: mean over tasks j < k of max_{l<k} (a[l][j] - a[k][j])."""
    if k < 2:
        raise ValueError("forgetting needs at least two tasks")
    total = 0.0
    for j in range(1, k):
        drops = [record.accuracy[l][j] - record.accuracy[k][j]
                 for l in range(j, k) if j in record.accuracy.get(l, {})]
        if len(drops) != k - j:
            raise ValueError(f"rows {j}..{k - 1} incomplete for task {j}")
        total += max(drops)
    return total / (k - 1)


def prototype_distance_trace(record: RunRecord) -> dict[int, list[tuple[int, float]]]:
    """Pivot of per-checkpoint prototype-to-true-mean distances:
    class -> [(k, distance), ...]."""
    trace: dict[int, list[tuple[int, float]]] = {}
    for k in sorted(record.proto_distance):
        for c, d in record.proto_distance[k].items():
            trace.setdefault(int(c), []).append((k, float(d)))
    return trace


def confusion_matrix(record: RunRecord, k: int):
    """(class ids, counts) at checkpoint k; counts[i][j] = samples of
    class i predicted as class j."""
    if k not in record.confusions:
        raise ValueError(f"no confusion recorded at task {k}")
    entry = record.confusions[k]
    return list(entry["classes"]), np.asarray(entry["counts"])


def _digest(model) -> str:
    h = hashlib.sha256()
    for p in model.params:
        h.update(p.data.tobytes())
    return h.hexdigest()


def _batches(n: int, batch_size: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def train_task(model, task_data: LabeledDataset, config: MethodConfig, rng,
               snap=None, importance=None) -> None:
    """One task's training loop on an embedding model.

    Metric loss per batch, plus the method's regularizer against ``snap``
    when gamma > 0. Raises TrainingError if no batch in any epoch yields a
    valid triplet.
    """
    if len(task_data.labels) == 0:
        raise TrainingError("task has no training data")
    opt = Adam(model.params, lr=config.lr)  # fresh state every task
    any_triplets = False
    for _ in range(config.epochs):
        for idx in _batches(len(task_data.labels), config.batch_size, rng):
            xb, yb = task_data.features[idx], task_data.labels[idx]
            z = model.embed(xb)
            trip = mine_triplets(yb, z, config.mining, config.margin, rng=rng)
            if len(trip) == 0:
                continue
            any_triplets = True
            loss = triplet_loss(z, trip)
            if config.gamma > 0 and snap is not None:
                if config.method == "E-LwF":
                    reg = lwf_align_loss(model, snap, xb)
                else:
                    reg = quadratic_penalty(model, snap, importance)
                loss = combined_loss(loss, reg, config.gamma)
            opt.zero_grad()
            loss.backward()
            opt.step()
    if not any_triplets:
        raise TrainingError(
            "no batch produced a valid triplet; check class mix and batch size"
        )


def _train_softmax_task(model: GrowingSoftmaxNet, task: Task, config: MethodConfig,
                        rng) -> None:
    """Cross-entropy on the newest head only; older heads get no gradient."""
    head = len(model.heads) - 1
    local = {c: i for i, c in enumerate(model.heads[head][2])}
    labels = np.array([local[c] for c in task.train.labels])
    params = list(model.trunk) + [model.heads[head][0], model.heads[head][1]]
    opt = Adam(params, lr=config.lr)
    for _ in range(config.epochs):
        for idx in _batches(len(labels), config.batch_size, rng):
            logits = model.head_logits(task.train.features[idx], head)
            loss = cross_entropy_loss(logits, labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()


def _embedding_eval(model, book: PrototypeBook, tasks_seen: list[Task],
                    record: RunRecord, k: int, feature_fn=None):
    """NCM evaluation over all seen classes; fills row k, confusion, and
    prototype-distance diagnostics."""
    emb = feature_fn if feature_fn is not None else model.embed_np
    seen_classes = sorted(c for t in tasks_seen for c in t.classes)
    col = {c: i for i, c in enumerate(seen_classes)}
    counts = np.zeros((len(seen_classes), len(seen_classes)), dtype=int)

    for task in tasks_seen:
        z = emb(task.test.features)
        pred = ncm_classify(z, book)
        record.set_acc(k, task.index, float(np.mean(pred == task.test.labels)))
        for true, p in zip(task.test.labels, pred):
            counts[col[int(true)], col[int(p)]] += 1

    record.confusions[k] = {"classes": seen_classes, "counts": counts.tolist()}
    dists = {}
    for task in tasks_seen:
        z = emb(task.test.features)
        for c in task.classes:
            true_mean = z[task.test.labels == c].mean(axis=0)
            dists[int(c)] = float(np.linalg.norm(book.entries[c].vector - true_mean))
    record.proto_distance[k] = dists


def _softmax_eval(model: GrowingSoftmaxNet, tasks_seen: list[Task],
                  record: RunRecord, k: int):
    seen_classes = sorted(c for t in tasks_seen for c in t.classes)
    col = {c: i for i, c in enumerate(seen_classes)}
    counts = np.zeros((len(seen_classes), len(seen_classes)), dtype=int)
    for task in tasks_seen:
        pred = model.predict_multihead(task.test.features)
        record.set_acc(k, task.index, float(np.mean(pred == task.test.labels)))
        for true, p in zip(task.test.labels, pred):
            counts[col[int(true)], col[int(p)]] += 1
    record.confusions[k] = {"classes": seen_classes, "counts": counts.tolist()}


def _capture_2d(model, book, sequence, record, k):
    """Keep task-1 test embeddings and prototype state for the figure."""
    if model.embedding_dim != 2:
        return
    t1 = sequence.tasks[0]
    z = model.embed_np(t1.test.features)
    record.embed2d[k] = {
        "points": z.tolist(),
        "labels": t1.test.labels.tolist(),
        "prototypes": {c: book.entries[c].vector.tolist() for c in book.class_ids()},
        "learned_at": {c: book.entries[c].learned_at for c in book.class_ids()},
        "compensation": {c: book.entries[c].compensation.tolist()
                         for c in book.class_ids()},
        "true_means": {
            int(c): z[t1.test.labels == c].mean(axis=0).tolist() for c in t1.classes
        },
    }


def run_sequence(config: MethodConfig, sequence: TaskSequence,
                 pretrain_data: LabeledDataset | None = None) -> RunRecord:
    """Drive one method over the whole task sequence; returns the filled
    RunRecord (with the final PrototypeBook attached as ``record.book``)."""
    start = time.perf_counter()
    record = RunRecord(
        method=config.method, seed=config.seed, n_tasks=len(sequence),
        task_classes=[t.classes for t in sequence.tasks], config=config.to_dict(),
    )
    rng = np.random.default_rng([config.seed, 101])

    if config.method in SOFTMAX_METHODS:
        record.book = _run_softmax(config, sequence, record, rng)
    elif config.method == "Joint":
        record.book = _run_joint(config, sequence, record, rng)
    else:
        record.book = _run_embedding(config, sequence, record, rng, pretrain_data)

    record.wall_time = time.perf_counter() - start
    return record


def _run_embedding(config, sequence, record, rng, pretrain_data):
    model = EmbeddingNet(sequence.input_dim, config.embedding_dim,
                         config.hidden, seed=config.seed)
    if config.method == "E-Pre-substitute":
        if pretrain_data is None:
            raise TrainingError(
                "E-Pre-substitute needs held-out pretraining data "
                "(dataset option pretrain_classes)"
            )
        train_task(model, pretrain_data, config, rng)

    book = PrototypeBook()
    kcfg = KernelConfig(sigma=config.sigma, weight_floor=config.weight_floor)
    snap = None
    frozen_prev = None
    maps: list[ImportanceMap] = []

    for task in sequence.tasks:
        t = task.index
        trains = {
            "E-FT": True, "E-LwF": True, "E-EWC": True, "E-MAS": True,
            "E-Fix": t == 1, "E-Pre-substitute": False,
        }[config.method]

        if trains:
            importance = None
            if config.method in ("E-EWC", "E-MAS") and maps:
                importance = maps[-1] if config.importance_mode == "latest" \
                    else ImportanceMap.average(maps)
            train_task(model, task.train, config, rng,
                       snap=snap if t > 1 else None, importance=importance)

        book.add_task(
            compute_prototypes(model.embed_np(task.train.features), task.train.labels,
                               classes=task.classes),
            task_index=t,
        )

        if config.sdc and t > 1:
            field = collect_drift(frozen_prev, model, task.train)
            before = {c: book.entries[c].vector.copy()
                      for c in book.class_ids() if book.entries[c].learned_at < t}
            compensate(book, field, kcfg, current_task=t)
            if config.renormalize_prototypes:
                for c in before:
                    e = book.entries[c]
                    norm = np.linalg.norm(e.vector)
                    if norm > 0:
                        e.vector = e.vector / norm
            record.sdc_events[t] = {
                int(c): {"before": before[c].tolist(),
                         "delta": (book.entries[c].vector - before[c]).tolist()}
                for c in before
            }

        if config.method == "E-EWC":
            maps.append(estimate_fisher(model, task.train, config.batch_size,
                                        config.fisher_variant))
        elif config.method == "E-MAS":
            maps.append(estimate_mas_importance(model, task.train))

        snap = snapshot(model, task_index=t)
        frozen_prev = EmbeddingNet.from_snapshot(snap)

        record.param_digest[t] = _digest(model)
        _embedding_eval(model, book, sequence.tasks[:t], record, t)
        _capture_2d(model, book, sequence, record, t)
    return book


def _run_joint(config, sequence, record, rng):
    """Upper bound: one training phase on the union of all tasks' data,
    then a single evaluation filling only the final row."""
    model = EmbeddingNet(sequence.input_dim, config.embedding_dim,
                         config.hidden, seed=config.seed)
    union = LabeledDataset(
        np.concatenate([t.train.features for t in sequence.tasks]),
        np.concatenate([t.train.labels for t in sequence.tasks]),
    )
    train_task(model, union, config, rng)
    book = PrototypeBook()
    for task in sequence.tasks:
        book.add_task(
            compute_prototypes(model.embed_np(task.train.features), task.train.labels,
                               classes=task.classes),
            task_index=task.index,
        )
    k = len(sequence)
    record.param_digest[k] = _digest(model)
    _embedding_eval(model, book, sequence.tasks, record, k)
    _capture_2d(model, book, sequence, record, k)
    return book


def _run_softmax(config, sequence, record, rng):
    model = GrowingSoftmaxNet(sequence.input_dim, config.embedding_dim,
                              config.hidden, seed=config.seed)
    book = PrototypeBook()  # FT* classifies by NCM over penultimate features

    def feats(x):
        return model.penultimate_features(x).data

    for task in sequence.tasks:
        t = task.index
        model.add_head(task.classes)
        _train_softmax_task(model, task, config, rng)
        record.param_digest[t] = _digest(model)
        if config.method == "FT*":
            book.add_task(
                compute_prototypes(feats(task.train.features), task.train.labels,
                                   classes=task.classes),
                task_index=t,
            )
            _embedding_eval(model, book, sequence.tasks[:t], record, t, feature_fn=feats)
        else:
            _softmax_eval(model, sequence.tasks[:t], record, t)
    return book
