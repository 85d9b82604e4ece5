"""Set-to-vector aggregators: the trainable SAN layer and classical pooling.

A set of ``n`` feature vectors of dimension ``K`` is stored as an ``(n, K)``
matrix.  Batches of sets with different cardinalities are stacked row-wise
and described by ``offsets`` (the first row of every set), which is what the
``*_batch`` functions take.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, DomainError
from .tensor import Tensor

ACTIVATIONS = {"relu": T.relu, "tanh": T.tanh, "sigmoid": T.sigmoid}
POOL_KINDS = ("max", "avg", "sum")
POSITIONAL_MODES = ("none", "normalized-index", "normalized-2d", "sinusoidal")


@dataclass(frozen=True)
class FeatureSet:
    elements: np.ndarray
    source_shape: tuple | None = None

    def __post_init__(self):
        el = np.array(self.elements, dtype=np.float64)
        if el.ndim == 1:
            el = el[:, None]
        if el.ndim != 2:
            raise DimensionError(f"feature set must be an (n, K) matrix, got shape {el.shape}")
        if el.shape[0] < 1 or el.shape[1] < 1:
            raise ContractError("feature set must contain at least one element")
        if not np.all(np.isfinite(el)):
            raise DomainError("feature set elements must be finite")
        if self.source_shape is not None:
            h, w = (int(s) for s in self.source_shape)
            if h * w != el.shape[0]:
                raise ContractError(
                    f"source shape {(h, w)} does not match cardinality {el.shape[0]}")
            object.__setattr__(self, "source_shape", (h, w))
        el.setflags(write=False)
        object.__setattr__(self, "elements", el)

    @property
    def n(self):
        return self.elements.shape[0]

    @property
    def dim(self):
        return self.elements.shape[1]

    def permuted(self, perm):
        return FeatureSet(self.elements[np.asarray(perm)])


def _rows(x):
    if isinstance(x, FeatureSet):
        return Tensor(x.elements)
    return T.as_tensor(x)


@dataclass
class SanLayer:
    """Single-layer set aggregation: ``e_m = sum_i act(v_m . x_i + b_m)``.

    ``V`` has one row per output neuron; the sum over elements is passed on
    linearly (no nonlinearity after aggregation).
    """

    V: Tensor
    b: Tensor
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        if self.V.data.ndim != 2 or self.b.data.ndim != 1 or self.V.shape[0] != self.b.shape[0]:
            raise DimensionError(
                f"SAN weight {self.V.shape} and bias {self.b.shape} do not conform")

    @classmethod
    def init(cls, in_dim, out_dim, activation="relu", rng=None):
        """Uniform fan-based init in +-sqrt(6 / (in + out)), zero biases."""
        rng = np.random.default_rng(rng)
        limit = math.sqrt(6.0 / (in_dim + out_dim))
        V = rng.uniform(-limit, limit, size=(out_dim, in_dim))
        return cls(Tensor(V, requires_grad=True), Tensor(np.zeros(out_dim), requires_grad=True),
                   activation)

    @property
    def in_dim(self):
        return self.V.shape[1]

    @property
    def out_dim(self):
        return self.V.shape[0]

    def preactivation(self, rows):
        rows = _rows(rows)
        if rows.data.ndim != 2 or rows.shape[1] != self.in_dim:
            raise DimensionError(
                f"SAN layer expects feature dim {self.in_dim}, got rows of shape {rows.shape}")
        return T.add(T.matmul(rows, T.transpose(self.V)), self.b)

    def parameters(self):
        return [self.V, self.b]


def san_aggregate_batch(rows, offsets, layer):
    """SAN embeddings of a stacked batch of sets, shape (B, M)."""
    act = ACTIVATIONS[layer.activation]
    return T.segment_sum(act(layer.preactivation(rows)), offsets)


def san_aggregate(fs, layer):
    """SAN embedding of one set, a length-M tensor."""
    rows = _rows(fs)
    emb = san_aggregate_batch(rows, [0], layer)
    return T.reshape(emb, (layer.out_dim,))


def pool_batch(rows, offsets, kind):
    if kind == "max":
        return T.segment_max(rows, offsets)
    if kind == "avg":
        return T.segment_mean(rows, offsets)
    if kind == "sum":
        return T.segment_sum(rows, offsets)
    raise ContractError(f"unknown pooling kind {kind!r}")


def pool(fs, kind):
    """Coordinatewise max / avg / sum over the rows of one set."""
    rows = _rows(fs)
    return T.reshape(pool_batch(rows, [0], kind), (rows.shape[1],))


def _fixed_cardinality(offsets, total, expected=None):
    offsets = np.asarray(offsets, dtype=np.int64)
    counts = np.diff(np.append(offsets, total))
    n = int(counts[0]) if expected is None else int(expected)
    bad = np.flatnonzero(counts != n)
    if bad.size:
        i = int(bad[0])
        raise ContractError(
            f"order-sensitive aggregator needs a fixed cardinality {n}, "
            f"but sample {i} has {int(counts[i])} elements")
    return n


def flatten_batch(rows, offsets, expected_n=None):
    rows = _rows(rows)
    n = _fixed_cardinality(offsets, rows.shape[0], expected_n)
    B = len(offsets)
    return T.reshape(rows, (B, n * rows.shape[1]))


@dataclass
class Conv1x1:
    """One-channel 1x1 convolution followed by flattening: entry i is ``w . x_i + b0``."""

    w: Tensor
    b0: Tensor

    @classmethod
    def init(cls, in_dim, rng=None):
        rng = np.random.default_rng(rng)
        limit = math.sqrt(6.0 / (in_dim + 1))
        return cls(Tensor(rng.uniform(-limit, limit, size=(in_dim, 1)), requires_grad=True),
                   Tensor(np.zeros(1), requires_grad=True))

    def parameters(self):
        return [self.w, self.b0]


def conv1x1_batch(rows, offsets, layer, expected_n=None):
    rows = _rows(rows)
    n = _fixed_cardinality(offsets, rows.shape[0], expected_n)
    if rows.shape[1] != layer.w.shape[0]:
        raise DimensionError(
            f"conv-1x1 weight length {layer.w.shape[0]} != feature dim {rows.shape[1]}")
    out = T.add(T.matmul(rows, layer.w), layer.b0)
    return T.reshape(out, (len(offsets), n))


def flatten(fs):
    rows = _rows(fs)
    return T.reshape(rows, (rows.size,))


def conv1x1(fs, w, b0=0.0):
    rows = _rows(fs)
    layer = Conv1x1(T.as_tensor(np.reshape(getattr(w, "data", w), (-1, 1))),
                    T.as_tensor(np.reshape(getattr(b0, "data", b0), (1,))))
    return T.reshape(conv1x1_batch(rows, [0], layer), (rows.shape[0],))


# ---------------------------------------------------------------------------
# positional augmentation


def position_columns(n, mode="none", source_shape=None, d_pos=2):
    """Columns appended to an n-element set by :func:`attach_positions`."""
    idx = np.arange(n, dtype=np.float64)
    if mode == "none":
        return np.zeros((n, 0))
    if mode == "normalized-index":
        return (idx / (n - 1) if n > 1 else np.zeros(n))[:, None]
    if mode == "normalized-2d":
        if source_shape is None:
            raise ContractError("normalized-2d positions need the source spatial shape")
        H, W = source_shape
        r, c = np.divmod(np.arange(n), W)
        r = r / (H - 1) if H > 1 else np.zeros(n)
        c = c / (W - 1) if W > 1 else np.zeros(n)
        return np.column_stack([r, c]).astype(np.float64)
    if mode == "sinusoidal":
        if d_pos < 2 or d_pos % 2:
            raise ContractError(f"sinusoidal positions need an even d_pos >= 2, got {d_pos}")
        k = np.arange(d_pos // 2)
        angle = idx[:, None] / 10000.0 ** (2.0 * k / d_pos)
        out = np.empty((n, d_pos))
        out[:, 0::2] = np.sin(angle)
        out[:, 1::2] = np.cos(angle)
        return out
    raise ContractError(f"unknown positional mode {mode!r}")


def positional_width(mode, d_pos=2):
    return {"none": 0, "normalized-index": 1, "normalized-2d": 2}.get(mode, d_pos)


def attach_positions(fs, mode="none", d_pos=2):
    cols = position_columns(fs.n, mode, fs.source_shape, d_pos)
    return FeatureSet(np.hstack([fs.elements, cols]), fs.source_shape)


# ---------------------------------------------------------------------------
# smooth maxima


def power_max_approx(values, p, mode="power"):
    """Smooth maximum: ``(sum x^p)^(1/p)`` or ``(1/p) log sum exp(p x)``.

    Both are computed relative to the maximum so large ``p`` cannot overflow.
    """
    x = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ContractError("need at least one value")
    if not p >= 1:
        raise DomainError(f"exponent must be >= 1, got {p}")
    m = x.max()
    if mode == "power":
        if np.any(x <= 0):
            raise DomainError("power mode requires strictly positive values")
        return float(m * np.sum((x / m) ** p) ** (1.0 / p))
    if mode == "log-sum-exp":
        return float(m + np.log(np.sum(np.exp(p * (x - m)))) / p)
    raise ContractError(f"unknown smooth-max mode {mode!r}")
