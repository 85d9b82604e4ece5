"""Adam training loop and evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import MetricsRecord
from .errors import ContractError, DomainError, TrainingError

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 256
    epochs: int = 10
    seed: int = 0
    validation_fraction: float = 0.0

    def __post_init__(self):
        if not self.lr > 0:
            raise ContractError("learning rate must be positive")
        if self.batch_size < 1:
            raise ContractError("batch size must be at least 1")
        if self.epochs < 0:
            raise ContractError("epochs must be non-negative")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ContractError("validation fraction must lie in [0, 1)")


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _batches(indices, size):
    for start in range(0, len(indices), size):
        yield indices[start:start + size]


def predict_logits(model, dataset, batch_size=256):
    out = [model.forward([dataset.samples[i] for i in idx]).data
           for idx in _batches(np.arange(len(dataset)), batch_size)]
    return np.vstack(out)


def evaluate(model, dataset, batch_size=256):
    """Mean cross-entropy and accuracy; argmax ties go to the lowest class index."""
    logits = predict_logits(model, dataset, batch_size)
    if logits.shape[1] != dataset.n_classes:
        raise ContractError(
            f"model emits {logits.shape[1]} logits but dataset has {dataset.n_classes} classes")
    loss = T.softmax_cross_entropy(logits, dataset.labels).item()
    acc = float(np.mean(np.argmax(logits, axis=1) == dataset.labels))
    return loss, acc


def split_validation(dataset, fraction, rng):
    order = rng.permutation(len(dataset))
    n_val = int(round(fraction * len(dataset)))
    return order[n_val:], order[:n_val]


def train(model, dataset, config):
    """Fit ``model`` in place with Adam on softmax cross-entropy.

    Returns ``(model, records)``; records hold one train row per epoch (running
    averages over the epoch's batches) and a valid row when a validation split
    is used.
    """
    records = []
    if config.epochs == 0:
        return model, records
    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = split_validation(dataset, config.validation_fraction, rng)
    if len(train_idx) == 0:
        raise ContractError("validation split leaves no training samples")
    valid = dataset.subset(val_idx) if len(val_idx) else None
    opt = Adam(model.parameters(), config.lr, config.beta1, config.beta2, config.eps)

    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(train_idx)
        loss_sum = correct = seen = 0.0
        for b, idx in enumerate(_batches(perm, config.batch_size), start=1):
            labels = dataset.labels[idx]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    logits = model.forward([dataset.samples[i] for i in idx])
                    loss = T.softmax_cross_entropy(logits, labels)
                    T.backward(loss)
            except DomainError as exc:
                raise TrainingError(f"training diverged at epoch {epoch}, batch {b}: {exc}",
                                    epoch, b) from exc
            if not np.isfinite(loss.item()):
                raise TrainingError(f"loss is not finite at epoch {epoch}, batch {b}", epoch, b)
            with np.errstate(over="ignore", invalid="ignore"):
                opt.step()
            if not all(np.all(np.isfinite(p.data)) for p in opt.params):
                raise TrainingError(
                    f"parameters became non-finite at epoch {epoch}, batch {b}", epoch, b)
            loss_sum += loss.item() * len(idx)
            correct += float(np.sum(np.argmax(logits.data, axis=1) == labels))
            seen += len(idx)
        records.append(MetricsRecord(epoch, "train", loss_sum / seen, correct / seen))
        if valid is not None:
            vl, va = evaluate(model, valid, config.batch_size)
            records.append(MetricsRecord(epoch, "valid", vl, va))
        log.info("epoch %d: loss %.4f acc %.4f", epoch, loss_sum / seen, correct / seen)
    return model, records
