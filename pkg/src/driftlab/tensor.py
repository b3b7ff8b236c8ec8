"""Dense float64 tensors with reverse-mode differentiation.

The engine is deliberately small: dense arrays, a handful of ops (affine,
ReLU, 2-d convolution and max-pool, fused softmax cross-entropy, L2
normalization, elementwise arithmetic, reductions), and a tape built
dynamically as ops execute. Gradients accumulate into leaf tensors until
explicitly zeroed, so a composite loss may be driven either by one backward
pass over a summed loss or by several passes.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not line up for the requested op."""


class StateError(RuntimeError):
    """Operation called in a state that does not support it."""


class NormalizationError(ValueError):
    """A slice with (numerically) zero norm cannot be normalized."""


class Tensor:
    """A float64 array plus an optional gradient buffer.

    Leaf tensors created with ``requires_grad=True`` are parameters: their
    ``grad`` starts at zeros and accumulates across backward passes.
    Tensors produced by ops carry the local backward rule; their gradient
    is transient to each backward call.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        else:
            self.grad.fill(0.0)

    def backward(self):
        """Propagate d(self)/d(leaf) into every reachable parameter's grad.

        ``self`` must be a scalar produced by ops of this engine (or a
        scalar parameter). Repeated calls keep accumulating.
        """
        if self.data.size != 1:
            raise StateError(
                f"backward requires a scalar, got shape {self.data.shape}"
            )
        if self._backward is None and not self.requires_grad:
            raise StateError("backward called on a tensor with no compute graph")

        topo = _toposort(self)
        flowing: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = flowing.get(id(parent))
                flowing[id(parent)] = pg if acc is None else acc + pg

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all shape rules live in the op functions
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(astensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(astensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(astensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def reshape(self, shape):
        return reshape(self, shape)


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    # iterative DFS; order is deterministic given construction order
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = None  # transient; filled per backward call
        out._parents = parents
        out._backward = backward
    return out


def add(a, b) -> Tensor:
    """Elementwise add. Supports same-shape, [n,d]+[d] bias rows, and scalar."""
    a, b = astensor(a), astensor(b)
    if a.data.shape == b.data.shape:
        back = lambda g: (g, g)
    elif b.data.ndim == 0:
        back = lambda g: (g, g.sum())
    elif a.data.ndim == 2 and b.data.shape == (a.data.shape[1],):
        back = lambda g: (g, g.sum(axis=0))
    else:
        raise ShapeError(f"cannot add shapes {a.data.shape} and {b.data.shape}")
    return _make(a.data + b.data, (a, b), back)


def neg(a) -> Tensor:
    a = astensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def sub(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.data.shape == b.data.shape:
        back = lambda g: (g, -g)
    elif b.data.ndim == 0:
        back = lambda g: (g, -g.sum())
    else:
        raise ShapeError(f"cannot subtract shapes {a.data.shape} and {b.data.shape}")
    return _make(a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product; scalar operands broadcast."""
    a, b = astensor(a), astensor(b)
    if not (a.data.shape == b.data.shape or a.data.ndim == 0 or b.data.ndim == 0):
        raise ShapeError(f"cannot multiply shapes {a.data.shape} and {b.data.shape}")

    def back(g):
        ga = g * b.data
        gb = g * a.data
        if a.data.ndim == 0:
            ga = ga.sum()
        if b.data.ndim == 0:
            gb = gb.sum()
        return ga, gb

    return _make(a.data * b.data, (a, b), back)


def matmul(a, b) -> Tensor:
    a, b = astensor(a), astensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"cannot matmul shapes {a.data.shape} and {b.data.shape}")
    return _make(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def relu(a) -> Tensor:
    a = astensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = astensor(a)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), back)


def tmean(a, axis=None) -> Tensor:
    a = astensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]

    def back(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.data.shape).copy(),)
        gg = np.expand_dims(g, axis) / n
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(np.mean(a.data, axis=axis), (a,), back)


def sqrt(a) -> Tensor:
    """Elementwise square root; the derivative is clamped to 0 at the origin."""
    a = astensor(a)
    root = np.sqrt(np.maximum(a.data, 0.0))

    def back(g):
        safe = np.where(root > 0.0, root, 1.0)
        return (np.where(root > 0.0, 0.5 * g / safe, 0.0),)

    return _make(root, (a,), back)


def index_rows(a, idx) -> Tensor:
    """Gather rows of a 2-d tensor; repeated indices accumulate gradient."""
    a = astensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"index_rows needs a 2-d tensor, got {a.data.shape}")
    idx = np.asarray(idx, dtype=np.intp)

    def back(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(a.data[idx], (a,), back)


def reshape(a, shape) -> Tensor:
    a = astensor(a)
    return _make(
        a.data.reshape(shape), (a,), lambda g: (g.reshape(a.data.shape),)
    )


def l2_normalize(a, axis: int = 1) -> Tensor:
    """Scale slices along ``axis`` to unit Euclidean norm.

    Raises NormalizationError when any slice norm falls below 1e-12; a
    degenerate embedding would otherwise blow up silently.
    """
    a = astensor(a)
    norms = np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=True))
    if np.min(norms) < 1e-12:
        raise NormalizationError(
            f"slice norm {np.min(norms):.3e} below 1e-12 along axis {axis}"
        )
    out = a.data / norms

    def back(g):
        dot = np.sum(a.data * g, axis=axis, keepdims=True)
        return ((g - a.data * (dot / norms**2)) / norms,)

    return _make(out, (a,), back)


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean negative log softmax probability of the true class (fused op)."""
    logits = astensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"logits must be [batch, classes], got {logits.data.shape}")
    labels = np.asarray(labels, dtype=np.intp)
    n, k = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range for {k} classes")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.sum(np.exp(shifted), axis=1))
    nll = logsumexp - shifted[np.arange(n), labels]

    def back(g):
        probs = np.exp(shifted - logsumexp[:, None])
        probs[np.arange(n), labels] -= 1.0
        return (probs * (float(g) / n),)

    return _make(np.mean(nll), (logits,), back)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain numpy softmax for inference paths (no gradient)."""
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def conv2d(x, w, b, stride: int = 1) -> Tensor:
    """Valid-padding 2-d convolution: x [N,C,H,W], w [F,C,kh,kw], b [F]."""
    x, w, b = astensor(x), astensor(w), astensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects x [N,C,H,W] and w [F,C,kh,kw]")
    n, c, h, wd = x.data.shape
    f, cw, kh, kw = w.data.shape
    if cw != c:
        raise ShapeError(f"channel mismatch: input {c}, kernel {cw}")
    if b.data.shape != (f,):
        raise ShapeError(f"bias shape {b.data.shape}, expected ({f},)")
    oh = (h - kh) // stride + 1
    ow = (wd - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"kernel {kh}x{kw} too large for input {h}x{wd}")

    out = np.tile(b.data[None, :, None, None], (n, 1, oh, ow))
    for u in range(kh):
        for v in range(kw):
            patch = x.data[:, :, u : u + oh * stride : stride, v : v + ow * stride : stride]
            out += np.einsum("nchw,fc->nfhw", patch, w.data[:, :, u, v])

    def back(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        for u in range(kh):
            for v in range(kw):
                patch = x.data[:, :, u : u + oh * stride : stride, v : v + ow * stride : stride]
                gw[:, :, u, v] = np.einsum("nfhw,nchw->fc", g, patch)
                gx[:, :, u : u + oh * stride : stride, v : v + ow * stride : stride] += np.einsum(
                    "nfhw,fc->nchw", g, w.data[:, :, u, v]
                )
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _make(out, (x, w, b), back)


def maxpool2d(x, k: int) -> Tensor:
    """Non-overlapping k-by-k max pooling; spatial dims must divide by k."""
    x = astensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d expects [N,C,H,W], got {x.data.shape}")
    n, c, h, w = x.data.shape
    if h % k or w % k:
        raise ShapeError(f"pool size {k} must divide spatial dims {h}x{w}")
    oh, ow = h // k, w // k
    windows = (
        x.data.reshape(n, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, k * k)
    )
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gwin = np.zeros((n, c, oh, ow, k * k))
        np.put_along_axis(gwin, arg[..., None], g[..., None], axis=-1)
        return (
            gwin.reshape(n, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),
        )

    return _make(out, (x,), back)
