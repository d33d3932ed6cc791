"""Training loop with early stopping, and evaluation metrics."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .graph import GraphSequence
from .model import DdgnnModel, PackedGraphs, forward, loss_and_grads, pack_graphs

log = logging.getLogger(__name__)


@dataclass
class LogRow:
    epoch: int
    train_loss: float
    val_acc: float | None = None


@dataclass
class TrainResult:
    model: DdgnnModel
    log: list[LogRow]
    best_val_acc: float
    best_epoch: int
    epochs_run: int
    stopped_early: bool
    adam: nn.AdamState = field(repr=False, default=None)


@dataclass
class EvalReport:
    overall_accuracy: float
    per_class_accuracy: list[float]
    confusion: np.ndarray
    avg_inference_ms: float

    def to_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "confusion": self.confusion.tolist(),
            "avg_inference_ms": self.avg_inference_ms,
        }

    def write_json(self, path, extra: dict | None = None) -> None:
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)

    def write_confusion_csv(self, path, header: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if header:
                fh.write(f"# {header}\n")
            csv.writer(fh).writerows(self.confusion.tolist())


def _packed(dataset: Sequence[GraphSequence]) -> list[tuple[PackedGraphs, int]]:
    return [(pack_graphs(gs.graphs), gs.label) for gs in dataset]


def accuracy(model: DdgnnModel, packed: list[tuple[PackedGraphs, int]]) -> float:
    hits = sum(int(np.argmax(forward(model, p))) == y for p, y in packed)
    return hits / len(packed)


def train(model: DdgnnModel, train_set: Sequence[GraphSequence], val_set: Sequence[GraphSequence],
          max_epochs: int | None = None, adam: nn.AdamState | None = None) -> TrainResult:
    """Per-sample Adam training with periodic validation and best-checkpoint restore.

    Each epoch visits the training set in a seeded shuffled order and takes one
    optimizer step per sequence. Every ``validate_every`` epochs the validation
    accuracy is measured; training stops once ``patience`` consecutive
    validation rounds fail to beat the best one, and the best parameters are
    restored.
    """
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be non-empty")
    cfg = model.config
    max_epochs = cfg.max_epochs if max_epochs is None else max_epochs
    train_packed = _packed(train_set)
    val_packed = _packed(val_set)
    adam = adam or nn.AdamState()

    best_acc = -1.0
    best_epoch = 0
    best_params = model.copy_params()
    stale = 0
    rows: list[LogRow] = []
    stopped = False
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_packed))
        total = 0.0
        for idx in order:
            packed, label = train_packed[idx]
            rng = np.random.default_rng([cfg.seed, epoch, int(idx)])
            loss, grads = loss_and_grads(model, packed, label, training=True, rng=rng)
            nn.adam_step(model.params, grads, adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon)
            total += loss
        row = LogRow(epoch, total / len(train_packed))
        if epoch % cfg.validate_every == 0:
            row.val_acc = accuracy(model, val_packed)
            if row.val_acc > best_acc:
                best_acc, best_epoch, stale = row.val_acc, epoch, 0
                best_params = model.copy_params()
            else:
                stale += 1
            log.info("epoch %d loss %.4f val_acc %.4f", epoch, row.train_loss, row.val_acc)
        rows.append(row)
        if row.val_acc is not None and stale >= cfg.patience:
            stopped = True
            break

    if best_acc < 0:
        # never validated (max_epochs < validate_every): validate the final model once
        best_acc, best_epoch = accuracy(model, val_packed), epoch
        best_params = model.copy_params()
        rows[-1].val_acc = best_acc
    model.params = best_params
    return TrainResult(model, rows, best_acc, best_epoch, epoch, stopped, adam)


def write_log_csv(rows: Sequence[LogRow], path, header: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_acc"])
        for r in rows:
            w.writerow([r.epoch, repr(r.train_loss), "" if r.val_acc is None else repr(r.val_acc)])


def evaluate(model: DdgnnModel, test_set: Sequence[GraphSequence]) -> EvalReport:
    m = model.config.class_count
    confusion = np.zeros((m, m), dtype=np.int64)
    times = []
    for gs in test_set:
        start = time.perf_counter()
        logits = forward(model, gs, training=False)
        times.append(time.perf_counter() - start)
        confusion[gs.label, int(np.argmax(logits))] += 1
    return report_from_confusion(confusion, 1000.0 * float(np.mean(times)) if times else 0.0)


def report_from_confusion(confusion: np.ndarray, avg_inference_ms: float = 0.0) -> EvalReport:
    totals = confusion.sum(axis=1)
    per_class = [float(confusion[c, c] / totals[c]) if totals[c] else 0.0 for c in range(len(confusion))]
    n = confusion.sum()
    overall = float(np.trace(confusion) / n) if n else 0.0
    return EvalReport(overall, per_class, confusion, avg_inference_ms)
