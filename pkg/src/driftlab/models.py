"""Network definitions: a unit-norm embedding MLP and a multi-head softmax
classifier sharing the same trunk, plus snapshot/restore and flat-binary
serialization.

Both nets use the stack input -> hidden ReLU layers -> linear projection.
The embedding net L2-normalizes the projection; the softmax net feeds it
to per-task heads. Sharing the trunk keeps capacity identical across the
two training regimes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import ShapeError, StateError, Tensor


def _kaiming_uniform(rng, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _init_stack(rng, dims: tuple[int, ...], trainable: bool) -> list[Tensor]:
    """Affine parameters for consecutive dim pairs: w1,b1,w2,b2,..."""
    params = []
    for din, dout in zip(dims[:-1], dims[1:]):
        params.append(Tensor(_kaiming_uniform(rng, din, dout), requires_grad=trainable))
        params.append(Tensor(np.zeros(dout), requires_grad=trainable))
    return params


def _run_stack(params: list[Tensor], x: Tensor) -> Tensor:
    """Affine/ReLU chain; the last affine stays linear."""
    n_layers = len(params) // 2
    h = x
    for i in range(n_layers):
        h = T.add(T.matmul(h, params[2 * i]), params[2 * i + 1])
        if i < n_layers - 1:
            h = T.relu(h)
    return h


@dataclass(frozen=True)
class ModelSnapshot:
    """Immutable deep copy of a model's parameters at a task boundary."""

    kind: str
    arch: dict
    params: tuple
    task_index: int

    def __post_init__(self):
        frozen = []
        for p in self.params:
            a = np.array(p, dtype=np.float64, copy=True)
            a.setflags(write=False)
            frozen.append(a)
        object.__setattr__(self, "params", tuple(frozen))


class EmbeddingNet:
    """MLP whose output rows are L2-normalized: input -> hidden ReLU
    layers -> embedding_dim -> unit sphere."""

    kind = "embedding"

    def __init__(self, input_dim: int, embedding_dim: int, hidden=(256, 256), seed: int = 0,
                 trainable: bool = True):
        self.input_dim = input_dim
        self.embedding_dim = embedding_dim
        self.hidden = tuple(hidden)
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params = _init_stack(rng, (input_dim, *self.hidden, embedding_dim), trainable)

    @property
    def arch(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "embedding_dim": self.embedding_dim,
        }

    def _check_batch(self, x) -> Tensor:
        x = T.astensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.input_dim:
            raise ShapeError(
                f"batch shape {x.data.shape}, expected [n, {self.input_dim}]"
            )
        return x

    def forward_raw(self, x) -> Tensor:
        """Pre-normalization output; sensitivity estimates hang off this."""
        return _run_stack(self.params, self._check_batch(x))

    def embed(self, x) -> Tensor:
        return T.l2_normalize(self.forward_raw(x), axis=1)

    def embed_np(self, x, batch: int = 512) -> np.ndarray:
        """Inference helper: plain array out, no graph kept."""
        x = np.asarray(x, dtype=np.float64)
        frozen = _detached(self)
        outs = [frozen.embed(x[i : i + batch]).data for i in range(0, len(x), batch)]
        return np.concatenate(outs) if outs else np.zeros((0, self.embedding_dim))

    @classmethod
    def from_snapshot(cls, snap: ModelSnapshot, trainable: bool = False) -> "EmbeddingNet":
        if snap.kind != cls.kind:
            raise StateError(f"snapshot holds a {snap.kind} model")
        m = cls(snap.arch["input_dim"], snap.arch["embedding_dim"],
                tuple(snap.arch["hidden"]), trainable=trainable)
        for p, a in zip(m.params, snap.params):
            p.data = a.copy()
        return m


class GrowingSoftmaxNet:
    """Shared trunk plus one linear head per task; heads map trunk features
    to that task's classes and record their global class ids."""

    kind = "softmax"

    def __init__(self, input_dim: int, feat_dim: int, hidden=(256, 256), seed: int = 0):
        self.input_dim = input_dim
        self.feat_dim = feat_dim
        self.hidden = tuple(hidden)
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self.trunk = _init_stack(self._rng, (input_dim, *self.hidden, feat_dim), True)
        self.heads: list[tuple[Tensor, Tensor, tuple[int, ...]]] = []

    @property
    def arch(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "feat_dim": self.feat_dim,
            "heads": [list(ids) for _, _, ids in self.heads],
        }

    @property
    def params(self) -> list[Tensor]:
        out = list(self.trunk)
        for w, b, _ in self.heads:
            out.extend((w, b))
        return out

    def add_head(self, classes) -> None:
        """Append a randomly initialized head.

        ``classes`` is either the explicit global class ids or a count, in
        which case ids continue consecutively from the classes seen so far.
        """
        if isinstance(classes, (int, np.integer)):
            start = 1 + max((max(ids) for _, _, ids in self.heads), default=-1)
            ids = tuple(range(start, start + int(classes)))
        else:
            ids = tuple(int(c) for c in classes)
        if not ids:
            raise ValueError("a head needs at least one class")
        w = Tensor(_kaiming_uniform(self._rng, self.feat_dim, len(ids)), requires_grad=True)
        b = Tensor(np.zeros(len(ids)), requires_grad=True)
        self.heads.append((w, b, ids))

    def penultimate_features(self, x) -> Tensor:
        x = T.astensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.input_dim:
            raise ShapeError(
                f"batch shape {x.data.shape}, expected [n, {self.input_dim}]"
            )
        return _run_stack(self.trunk, x)

    def head_logits(self, x, head: int) -> Tensor:
        w, b, _ = self.heads[head]
        return T.add(T.matmul(self.penultimate_features(x), w), b)

    def predict_multihead(self, x) -> np.ndarray:
        """Global argmax over the concatenation of per-head softmax rows."""
        if not self.heads:
            raise StateError("no heads; train at least one task first")
        feats = _detached(self).penultimate_features(x).data
        probs = []
        all_ids = []
        for w, b, ids in self.heads:
            probs.append(T.softmax(feats @ w.data + b.data, axis=1))
            all_ids.extend(ids)
        stacked = np.concatenate(probs, axis=1)
        return np.asarray(all_ids)[stacked.argmax(axis=1)]


def _detached(model):
    """Clone with requires_grad off so forwards build no graph."""
    if isinstance(model, EmbeddingNet):
        c = EmbeddingNet(model.input_dim, model.embedding_dim, model.hidden, trainable=False)
        for p, q in zip(c.params, model.params):
            p.data = q.data
        return c
    c = GrowingSoftmaxNet(model.input_dim, model.feat_dim, model.hidden)
    for p, q in zip(c.trunk, model.trunk):
        p.data = q.data
        p.requires_grad = False
        p.grad = None
    for w, b, ids in model.heads:
        c.heads.append((Tensor(w.data), Tensor(b.data), ids))
    return c


def snapshot(model, task_index: int = 0) -> ModelSnapshot:
    return ModelSnapshot(
        kind=model.kind,
        arch=model.arch,
        params=tuple(p.data for p in model.params),
        task_index=task_index,
    )


def restore(model, snap: ModelSnapshot) -> None:
    if model.kind != snap.kind or model.arch != snap.arch:
        raise StateError(
            f"architecture mismatch: model {model.kind}/{model.arch} "
            f"vs snapshot {snap.kind}/{snap.arch}"
        )
    for p, a in zip(model.params, snap.params):
        p.data = a.copy()


def save_model(model, path) -> None:
    """Flat little-endian float64 parameter dump + JSON architecture sidecar."""
    path = str(path)
    flat = np.concatenate([p.data.ravel() for p in model.params])
    with open(path, "wb") as fh:
        fh.write(flat.astype("<f8").tobytes())
    sidecar = {
        "kind": model.kind,
        "arch": model.arch,
        "param_shapes": [list(p.data.shape) for p in model.params],
    }
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1)


def load_model(path):
    path = str(path)
    with open(path + ".json") as fh:
        sidecar = json.load(fh)
    arch = sidecar["arch"]
    if sidecar["kind"] == "embedding":
        model = EmbeddingNet(arch["input_dim"], arch["embedding_dim"], tuple(arch["hidden"]))
    else:
        model = GrowingSoftmaxNet(arch["input_dim"], arch["feat_dim"], tuple(arch["hidden"]))
        for ids in arch["heads"]:
            model.add_head(ids)
    flat = np.frombuffer(open(path, "rb").read(), dtype="<f8")
    shapes = [tuple(s) for s in sidecar["param_shapes"]]
    sizes = [int(np.prod(s)) for s in shapes]
    if flat.size != sum(sizes):
        raise StateError(f"{path}: {flat.size} values, sidecar wants {sum(sizes)}")
    at = 0
    for p, shape, size in zip(model.params, shapes, sizes):
        p.data = flat[at : at + size].reshape(shape).copy()
        at += size
    return model
