"""Feature extractor -> set aggregator -> dense head classifiers.

A sample is either a :class:`FeatureSet` or an H x W x C image array.  Images
fed to the convolutional extractor become sets of depth vectors of the last
feature map; images fed to the MLP extractor become sets of pixel vectors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .aggregation import (
    Conv1x1,
    FeatureSet,
    SanLayer,
    conv1x1_batch,
    flatten_batch,
    pool_batch,
    position_columns,
    positional_width,
    san_aggregate_batch,
)
from .errors import ContractError
from .tensor import Tensor

AGGREGATORS = ("san", "max", "avg", "sum", "flatten", "conv1x1")
ORDER_SENSITIVE = ("flatten", "conv1x1")


@dataclass
class ModelConfig:
    n_classes: int
    in_dim: int = 2                      # element dim (MLP) or image channels (conv)
    extractor: str = "mlp"               # "mlp" or "conv"
    extractor_widths: tuple = (16,)
    conv_channels: tuple = (8, 16)
    aggregator: str = "san"
    san_outputs: int = 64
    activation: str = "relu"
    positional: str = "none"
    d_pos: int = 2
    head_widths: tuple = ()
    identity_head: bool = False
    fixed_n: int | None = None           # required by flatten / conv1x1

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ContractError(f"unknown aggregator {self.aggregator!r}")
        if self.extractor not in ("mlp", "conv"):
            raise ContractError(f"unknown extractor {self.extractor!r}")
        if self.aggregator in ORDER_SENSITIVE and self.fixed_n is None:
            raise ContractError(f"{self.aggregator} aggregator needs fixed_n")
        self.extractor_widths = tuple(int(w) for w in self.extractor_widths)
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.head_widths = tuple(int(w) for w in self.head_widths)


def _glorot(rng, fan_in, fan_out, shape):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def image_to_set(feature_map):
    """H x W x C map -> set of H*W depth vectors in row-major position order."""
    fm = np.asarray(getattr(feature_map, "data", feature_map), dtype=np.float64)
    if fm.ndim == 2:
        fm = fm[:, :, None]
    H, W, C = fm.shape
    return FeatureSet(fm.reshape(H * W, C), source_shape=(H, W))


class Model:
    def __init__(self, config, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.params = {}
        c = config

        if c.extractor == "conv":
            cin = c.in_dim
            for i, cout in enumerate(c.conv_channels):
                self.params[f"conv{i}.w"] = _glorot(rng, 9 * cin, 9 * cout, (3, 3, cin, cout))
                self.params[f"conv{i}.b"] = Tensor(np.zeros(cout), requires_grad=True)
                cin = cout
            feat = cin
        else:
            feat = c.in_dim
            for i, width in enumerate(c.extractor_widths):
                self.params[f"psi{i}.w"] = _glorot(rng, feat, width, (feat, width))
                self.params[f"psi{i}.b"] = Tensor(np.zeros(width), requires_grad=True)
                feat = width
        self.feature_dim = feat
        agg_in = feat + positional_width(c.positional, c.d_pos)

        self.san = None
        self.conv1x1 = None
        if c.aggregator == "san":
            self.san = SanLayer.init(agg_in, c.san_outputs, c.activation, rng)
            self.params["san.V"], self.params["san.b"] = self.san.V, self.san.b
            width = c.san_outputs
        elif c.aggregator == "flatten":
            width = c.fixed_n * agg_in
        elif c.aggregator == "conv1x1":
            self.conv1x1 = Conv1x1.init(agg_in, rng)
            self.params["c1x1.w"], self.params["c1x1.b"] = self.conv1x1.w, self.conv1x1.b0
            width = c.fixed_n
        else:
            width = agg_in
        self.aggregate_dim = width

        if c.identity_head:
            if c.head_widths or c.n_classes != width:
                raise ContractError(
                    f"identity head needs n_classes == aggregate dim {width}")
            self.n_head = 0
        else:
            for i, out in enumerate(c.head_widths + (c.n_classes,)):
                self.params[f"phi{i}.w"] = _glorot(rng, width, out, (width, out))
                self.params[f"phi{i}.b"] = Tensor(np.zeros(out), requires_grad=True)
                width = out
            self.n_head = len(c.head_widths) + 1

    # -- parameters ---------------------------------------------------------

    def parameters(self):
        return list(self.params.values())

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state):
        for k, p in self.params.items():
            if k not in state or state[k].shape != p.shape:
                raise ContractError(f"parameter {k!r} missing or of wrong shape")
            p.data[...] = state[k]

    # -- forward ------------------------------------------------------------

    def _relu(self, x, trace):
        if trace is not None:
            trace.append(x.data)
        return T.relu(x)

    def _conv_features(self, images, trace):
        x = Tensor(np.stack(images))
        n_layers = len(self.config.conv_channels)
        for i in range(n_layers):
            x = T.add(T.conv2d(x, self.params[f"conv{i}.w"]), self.params[f"conv{i}.b"])
            x = self._relu(x, trace)
            if i < n_layers - 1:
                x = T.maxpool2d(x, 2)
        B, h, w, F = x.shape
        return T.reshape(x, (B * h * w, F)), [(h, w)] * B

    def feature_rows(self, samples, trace=None):
        """Stack extracted element features of a batch.

        Returns ``(rows, offsets, source_shapes, counts, order)`` where
        ``order[k]`` is the index into ``samples`` of the k-th stacked set.
        """
        c = self.config
        if c.extractor == "conv":
            images = [np.asarray(s, dtype=np.float64) for s in samples]
            images = [im[:, :, None] if im.ndim == 2 else im for im in images]
            if any(not isinstance(s, np.ndarray) for s in samples):
                raise ContractError("the convolutional extractor expects image arrays")
            groups = {}
            for i, im in enumerate(images):
                groups.setdefault(im.shape, []).append(i)
            parts, shapes, order = [], [], []
            for idx in groups.values():
                rows, sh = self._conv_features([images[i] for i in idx], trace)
                parts.append(rows)
                shapes += sh
                order += idx
            rows = parts[0] if len(parts) == 1 else T.concat(parts, axis=0)
            counts = [h * w for h, w in shapes]
        else:
            sets = [s if isinstance(s, FeatureSet) else image_to_set(s) for s in samples]
            for s in sets:
                if s.dim != c.in_dim:
                    raise ContractError(
                        f"model expects element dim {c.in_dim}, got {s.dim}")
            rows = Tensor(np.vstack([s.elements for s in sets]))
            for i in range(len(c.extractor_widths)):
                rows = T.add(T.matmul(rows, self.params[f"psi{i}.w"]), self.params[f"psi{i}.b"])
                rows = self._relu(rows, trace)
            shapes = [s.source_shape for s in sets]
            counts = [s.n for s in sets]
            order = list(range(len(sets)))
        offsets = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        return rows, offsets, shapes, counts, order

    def forward(self, samples, trace=None):
        """Logits of shape (B, n_classes) for a list of samples."""
        c = self.config
        if len(samples) == 0:
            raise ContractError("empty batch")
        rows, offsets, shapes, counts, order = self.feature_rows(samples, trace)
        if c.positional != "none":
            pos = np.vstack([position_columns(n, c.positional, sh, c.d_pos)
                             for n, sh in zip(counts, shapes)])
            rows = T.concat([rows, Tensor(pos)], axis=1)

        if c.aggregator == "san":
            if trace is not None:
                trace.append(self.san.preactivation(rows).data)
            z = san_aggregate_batch(rows, offsets, self.san)
        elif c.aggregator == "flatten":
            z = flatten_batch(rows, offsets, c.fixed_n)
        elif c.aggregator == "conv1x1":
            z = conv1x1_batch(rows, offsets, self.conv1x1, c.fixed_n)
        else:
            z = pool_batch(rows, offsets, c.aggregator)

        for i in range(self.n_head):
            z = T.add(T.matmul(z, self.params[f"phi{i}.w"]), self.params[f"phi{i}.b"])
            if i < self.n_head - 1:
                z = self._relu(z, trace)

        if order != sorted(order):
            z = T.take_rows(z, np.argsort(order))
        return z

    def cardinality(self, sample):
        return set_cardinality(sample, self.config.extractor, len(self.config.conv_channels))


def set_cardinality(sample, extractor="mlp", conv_layers=2):
    """Number of set elements the aggregator sees for ``sample``."""
    if isinstance(sample, FeatureSet):
        return sample.n
    h, w = np.asarray(sample).shape[:2]
    if extractor == "conv":
        for i in range(conv_layers):
            h, w = h - 2, w - 2
            if i < conv_layers - 1:
                h, w = h // 2, w // 2
    return int(h * w)


def build_model(config, seed=0):
    return Model(config, seed)


def model_forward(model, sample):
    """Logit vector (length n_classes) for a single image or feature set."""
    logits = model.forward([sample])
    return T.reshape(logits, (logits.shape[1],))
