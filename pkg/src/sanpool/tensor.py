"""Dense float64 tensors with tape-style reverse-mode differentiation.

Every primitive returns a new :class:`Tensor` that remembers its inputs and a
closure mapping the output gradient to input gradients.  Node ids come from a
process-wide counter, so an output always has a larger id than any of its
inputs and sorting reachable nodes by id (descending) is a valid reverse
topological order.  The graph is rebuilt on every forward pass.
"""
from __future__ import annotations

import itertools

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, DomainError

_node_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise DomainError("tensor data must be finite")
        if any(d < 1 for d in arr.shape):
            raise DimensionError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, op, backward):
    if not np.all(np.isfinite(data)):
        raise DomainError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node_id = next(_node_ids)
    out.op = op
    out.requires_grad = any(p.requires_grad for p in parents)
    out._parents = tuple(parents) if out.requires_grad else ()
    out._backward = backward if out.requires_grad else None
    return out


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes do not conform: {a.shape} and {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return _result(A @ B, (a, b), "matmul", backward)


def add(a, b):
    """Elementwise sum; ``b`` may also be a bias vector broadcast over leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        return _result(a.data + b.data, (a, b), "add", lambda g: (g, g))
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        n = b.shape[0]
        return _result(a.data + b.data, (a, b), "add",
                       lambda g: (g, g.reshape(-1, n).sum(axis=0)))
    raise DimensionError(f"add shapes do not conform: {a.shape} and {b.shape}")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), "relu", lambda g: (g * mask,))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), "tanh", lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _result(y, (x,), "sigmoid", lambda g: (g * y * (1.0 - y),))


def exp(x):
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return _result(y, (x,), "exp", lambda g: (g * y,))


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log requires strictly positive input")
    X = x.data
    return _result(np.log(X), (x,), "log", lambda g: (g / X,))


def power(x, p):
    x = as_tensor(x)
    p = float(p)
    X = x.data
    integral = p.is_integer() and p >= 1
    if not integral and np.any(X <= 0):
        raise DomainError(f"pow with exponent {p} requires strictly positive input")
    with np.errstate(over="ignore"):
        y = X ** p
    return _result(y, (x,), "pow", lambda g: (g * p * X ** (p - 1.0),))


def reduce_sum(x, axis=None):
    """Sum over ``axis`` (all axes when None)."""
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        return _result(np.asarray(x.data.sum()), (x,), "reduce_sum",
                       lambda g: (np.full(shape, float(g)),))
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"reduce_sum axis {axis} out of range for shape {shape}")

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(x.data.sum(axis=axis), (x,), "reduce_sum", backward)


def _check_offsets(x, offsets):
    offsets = np.asarray(offsets, dtype=np.int64)
    total = x.shape[0]
    if offsets.ndim != 1 or offsets.size == 0 or offsets[0] != 0:
        raise ContractError("segment offsets must be a nonempty 1-D array starting at 0")
    if np.any(np.diff(offsets) <= 0) or offsets[-1] >= total:
        raise ContractError("segments must be nonempty and lie inside the row range")
    counts = np.diff(np.append(offsets, total))
    return offsets, counts


def segment_sum(x, offsets):
    """Sum rows of ``x`` within consecutive segments starting at ``offsets``."""
    x = as_tensor(x)
    offsets, counts = _check_offsets(x, offsets)
    out = np.add.reduceat(x.data, offsets, axis=0)
    return _result(out, (x,), "segment_sum",
                   lambda g: (np.repeat(g, counts, axis=0),))


def segment_mean(x, offsets):
    x = as_tensor(x)
    offsets, counts = _check_offsets(x, offsets)
    c = counts.reshape((-1,) + (1,) * (x.data.ndim - 1)).astype(np.float64)
    out = np.add.reduceat(x.data, offsets, axis=0) / c
    return _result(out, (x,), "segment_mean",
                   lambda g: (np.repeat(g / c, counts, axis=0),))


def segment_max(x, offsets):
    """Coordinatewise max per segment; gradient goes to the first maximizing row."""
    x = as_tensor(x)
    offsets, counts = _check_offsets(x, offsets)
    X = x.data
    out = np.maximum.reduceat(X, offsets, axis=0)
    winners = np.stack([
        s + np.argmax(X[s:s + c], axis=0) for s, c in zip(offsets, counts)
    ])

    def backward(g):
        dx = np.zeros_like(X)
        cols = np.broadcast_to(np.arange(X.shape[1]), winners.shape)
        np.add.at(dx, (winners, cols), g)
        return (dx,)

    return _result(out, (x,), "segment_max", backward)


def transpose(x):
    x = as_tensor(x)
    if x.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {x.shape}")
    return _result(x.data.T.copy(), (x,), "transpose", lambda g: (g.T,))


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {old} to {tuple(shape)}") from exc
    return _result(y, (x,), "reshape", lambda g: (g.reshape(old),))


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(
            f"concat shapes do not conform: {[t.shape for t in ts]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _result(y, ts, "concat", lambda g: tuple(np.split(g, bounds, axis=axis)))


def take_rows(x, index):
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    X = x.data

    def backward(g):
        dx = np.zeros_like(X)
        np.add.at(dx, index, g)
        return (dx,)

    return _result(X[index], (x,), "take_rows", backward)


def conv2d(x, w):
    """Valid, stride-1 2-D convolution of NHWC input with (kh, kw, C, F) kernel."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[3] != w.shape[2]:
        raise DimensionError(f"conv2d shapes do not conform: {x.shape} and {w.shape}")
    B, H, W, C = x.shape
    kh, kw, _, F = w.shape
    if H < kh or W < kw:
        raise DimensionError(f"conv2d input {x.shape} smaller than kernel {w.shape}")
    Ho, Wo = H - kh + 1, W - kw + 1
    # (B, Ho, Wo, C, kh, kw) -> (B*Ho*Wo, kh*kw*C)
    cols = sliding_window_view(x.data, (kh, kw), axis=(1, 2))
    cols = cols.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, kh * kw * C)
    wmat = w.data.reshape(kh * kw * C, F)
    out = (cols @ wmat).reshape(B, Ho, Wo, F)

    def backward(g):
        gmat = g.reshape(B * Ho * Wo, F)
        dw = (cols.T @ gmat).reshape(w.shape)
        dcols = (gmat @ wmat.T).reshape(B, Ho, Wo, kh, kw, C)
        dx = np.zeros((B, H, W, C))
        for i in range(kh):
            for j in range(kw):
                dx[:, i:i + Ho, j:j + Wo, :] += dcols[:, :, :, i, j, :]
        return dx, dw

    return _result(out, (x, w), "conv2d", backward)


def maxpool2d(x, size=2):
    """Non-overlapping max pooling of NHWC input; trailing rows/cols are dropped."""
    x = as_tensor(x)
    B, H, W, C = x.shape
    Ho, Wo = H // size, W // size
    if Ho < 1 or Wo < 1:
        raise DimensionError(f"maxpool2d window {size} larger than input {x.shape}")
    crop = x.data[:, :Ho * size, :Wo * size, :]
    win = crop.reshape(B, Ho, size, Wo, size, C).transpose(0, 1, 3, 5, 2, 4)
    win = win.reshape(B, Ho, Wo, C, size * size)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        dwin = np.zeros((B, Ho, Wo, C, size * size))
        np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
        dwin = dwin.reshape(B, Ho, Wo, C, size, size).transpose(0, 1, 4, 2, 5, 3)
        dx = np.zeros((B, H, W, C))
        dx[:, :Ho * size, :Wo * size, :] = dwin.reshape(B, Ho * size, Wo * size, C)
        return (dx,)

    return _result(out, (x,), "maxpool2d", backward)


def softmax_cross_entropy(logits, labels):
    """Mean softmax cross-entropy of (B, N) logits against integer labels."""
    logits = as_tensor(logits)
    Z = logits.data
    if Z.ndim == 1:
        Z = Z[None, :]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    B, N = Z.shape
    if labels.shape != (B,):
        raise DimensionError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if np.any(labels < 0) or np.any(labels >= N):
        raise ContractError(f"labels must lie in [0, {N})")
    shifted = Z - Z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    loss = np.mean(lse - shifted[np.arange(B), labels])
    probs = np.exp(shifted - lse[:, None])
    probs[np.arange(B), labels] -= 1.0
    shape = logits.shape

    def backward(g):
        return ((float(g) / B) * probs.reshape(shape),)

    return _result(np.asarray(loss), (logits,), "softmax_cross_entropy", backward)


PRIMITIVES = {
    "matmul": matmul,
    "add": add,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "reduce_sum": reduce_sum,
    "pow": power,
    "exp": exp,
    "log": log,
    "softmax_cross_entropy": softmax_cross_entropy,
    "segment_sum": segment_sum,
    "segment_mean": segment_mean,
    "segment_max": segment_max,
    "reshape": reshape,
    "transpose": transpose,
    "concat": concat,
    "take_rows": take_rows,
    "conv2d": conv2d,
    "maxpool2d": maxpool2d,
}


def apply_primitive(kind, *inputs, **params):
    """Dispatch a primitive by name, e.g. ``apply_primitive("reduce_sum", x, axis=0)``."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise ContractError(f"unknown primitive {kind!r}") from None
    return fn(*inputs, **params)


def backward(loss):
    """Write d(loss)/d(node) into ``.grad`` of every reachable node.

    Gradients of all reachable nodes are reset before writing, so calling this
    twice on the same graph yields the same gradients rather than doubling them.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if t.node_id in nodes:
            continue
        nodes[t.node_id] = t
        stack.extend(t._parents)
    for t in nodes.values():
        t.grad = np.zeros_like(t.data) if t.requires_grad else None
    loss.grad = np.ones_like(loss.data)
    for nid in sorted(nodes, reverse=True):
        t = nodes[nid]
        if t._backward is None:
            continue
        for parent, g in zip(t._parents, t._backward(t.grad)):
            if parent.requires_grad and g is not None:
                parent.grad += g
