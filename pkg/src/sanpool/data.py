"""Datasets, IDX files, synthetic set tasks, image resizing and CSV output."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

from .aggregation import FeatureSet
from .errors import ContractError, FormatError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


@dataclass
class LabeledDataset:
    samples: list
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.samples) == 0:
            raise ContractError("dataset must not be empty")
        if len(self.samples) != self.labels.shape[0]:
            raise ContractError(
                f"{len(self.samples)} samples but {self.labels.shape[0]} labels")
        if np.any(self.labels < 0) or np.any(self.labels >= self.n_classes):
            raise ContractError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.samples)

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset([self.samples[i] for i in indices], self.labels[indices],
                              self.n_classes)

    def cardinalities(self):
        return [s.n if isinstance(s, FeatureSet) else s.shape[0] * s.shape[1]
                for s in self.samples]


@dataclass
class MetricsRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float


# ---------------------------------------------------------------------------
# IDX


def _read_header(buf, path, magic, ndims):
    if len(buf) < 4:
        raise FormatError(f"{path}: truncated magic number at offset 0")
    (found,) = struct.unpack_from(">I", buf, 0)
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    need = 4 + 4 * ndims
    if len(buf) < need:
        raise FormatError(f"{path}: truncated header at offset {len(buf)}, need {need} bytes")
    dims = struct.unpack_from(f">{ndims}I", buf, 4)
    size = int(np.prod(dims))
    if len(buf) < need + size:
        raise FormatError(
            f"{path}: truncated payload at offset {len(buf)}, expected {need + size} bytes")
    return dims, np.frombuffer(buf, dtype=np.uint8, count=size, offset=need)


def read_idx_images(path):
    with open(path, "rb") as f:
        buf = f.read()
    dims, payload = _read_header(buf, path, IMAGE_MAGIC, 3)
    return payload.reshape(dims)


def read_idx_labels(path):
    with open(path, "rb") as f:
        buf = f.read()
    _, payload = _read_header(buf, path, LABEL_MAGIC, 1)
    return payload.copy()


def load_idx(image_path, label_path, n_classes=None):
    """Load an IDX image/label pair as H x W x 1 float images scaled to [0, 1]."""
    images = read_idx_images(image_path)
    labels = read_idx_labels(label_path).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"count mismatch at offset 4: {images.shape[0]} images in {image_path} "
            f"but {labels.shape[0]} labels in {label_path}")
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    samples = [(img.astype(np.float64) / 255.0)[:, :, None] for img in images]
    return LabeledDataset(samples, labels, n_classes)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">4I", IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">2I", LABEL_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


# ---------------------------------------------------------------------------
# synthetic set tasks


def _balanced_labels(count, n_classes, rng):
    return rng.permutation(np.arange(count) % n_classes)


def gen_blob_sets(centers, spread, n_range, count, seed):
    """Each sample is a cloud of points around the center of its class."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    lo, hi = n_range
    if not 1 <= lo <= hi:
        raise ContractError(f"invalid cardinality range {n_range}")
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(count, len(centers), rng)
    samples = []
    for y in labels:
        n = int(rng.integers(lo, hi + 1))
        pts = centers[y] + spread * rng.standard_normal((n, centers.shape[1]))
        samples.append(FeatureSet(pts))
    return LabeledDataset(samples, labels, len(centers))


def gen_ring_vs_blob(n_range, count, seed, radius=2.0, spread=0.3):
    """Class 0: points near a circle of ``radius``; class 1: a blob at the origin."""
    lo, hi = n_range
    if not 1 <= lo <= hi:
        raise ContractError(f"invalid cardinality range {n_range}")
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(count, 2, rng)
    samples = []
    for y in labels:
        n = int(rng.integers(lo, hi + 1))
        if y == 0:
            theta = rng.uniform(0.0, 2 * np.pi, n)
            r = radius + spread * rng.standard_normal(n)
            pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        else:
            pts = spread * rng.standard_normal((n, 2))
        samples.append(FeatureSet(pts))
    return LabeledDataset(samples, labels, 2)


def gen_synthetic_sets(task, count, seed, **kwargs):
    if task == "blob-sets":
        return gen_blob_sets(kwargs.get("centers", [(-2.0, -2.0), (2.0, 2.0)]),
                             kwargs.get("spread", 0.5), kwargs.get("n_range", (5, 20)),
                             count, seed)
    if task == "ring-vs-blob":
        return gen_ring_vs_blob(kwargs.get("n_range", (5, 20)), count, seed)
    raise ContractError(f"unknown synthetic task {task!r}")


# ---------------------------------------------------------------------------
# resizing


def _catmull_rom(t, a=-0.5):
    t = np.abs(t)
    return np.where(
        t <= 1, ((a + 2) * t - (a + 3)) * t * t + 1,
        np.where(t < 2, a * (((t - 5) * t + 8) * t - 4), 0.0))


def _resize_axis(img, new_len, axis, method):
    old = img.shape[axis]
    if new_len == old:
        return img
    # align corners: output i samples source coordinate i * (old - 1) / (new - 1)
    if new_len > 1:
        src = np.arange(new_len) * (old - 1) / (new_len - 1)
    else:
        src = np.zeros(1)
    base = np.floor(src).astype(np.int64)
    frac = src - base
    x = np.moveaxis(img, axis, 0)
    anchor = x[np.clip(base, 0, old - 1)]
    # weights sum to one, so write the result as anchor + sum w_k (x_k - anchor);
    # constant inputs then come out exactly constant
    out = anchor.copy()
    if method == "bilinear":
        taps = [(1, frac)]
    elif method == "bicubic":
        taps = [(k, _catmull_rom(frac - k)) for k in (-1, 1, 2)]
    else:
        raise ContractError(f"unknown resize method {method!r}")
    for k, w in taps:
        nb = x[np.clip(base + k, 0, old - 1)]
        w = w.reshape((-1,) + (1,) * (x.ndim - 1))
        out = out + w * (nb - anchor)
    return np.moveaxis(out, 0, axis)


def resize_image(image, new_h, new_w, method="bicubic"):
    """Resize an H x W (x C) image with align-corners sampling and edge clamping."""
    if new_h < 1 or new_w < 1:
        raise ContractError(f"target size must be positive, got {(new_h, new_w)}")
    img = np.asarray(image, dtype=np.float64)
    out = _resize_axis(img, int(new_h), 0, method)
    out = _resize_axis(out, int(new_w), 1, method)
    return out.copy() if out is img else out


# ---------------------------------------------------------------------------
# CSV


def write_metrics_csv(records, path):
    with open(path, "w", newline="") as f:
        f.write("epoch,split,loss,accuracy\n")
        for r in records:
            f.write(f"{r.epoch},{r.split},{r.loss:.6f},{r.accuracy:.6f}\n")


def read_metrics_csv(path):
    with open(path, newline="") as f:
        return [MetricsRecord(int(row["epoch"]), row["split"], float(row["loss"]),
                              float(row["accuracy"]))
                for row in csv.DictReader(f)]


def write_profile_csv(report, path):
    with open(path, "w", newline="") as f:
        f.write("b,f\n")
        for b, v in zip(report.bias_grid, report.values):
            f.write(f"{b:.6f},{v:.6f}\n")


def write_collision_csv(reports, path):
    with open(path, "w", newline="") as f:
        f.write("M,pairs,collisions,min_distance\n")
        for r in reports:
            f.write(f"{r.M},{r.pairs_tested},{r.collisions},{r.min_pair_distance:.6e}\n")
