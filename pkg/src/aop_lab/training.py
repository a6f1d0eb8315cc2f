"""Seeded mini-batch training on top of :mod:`aop_lab.netcore`."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .averaging import ModelAverager
from .datagen import LabeledDataset
from .netcore import (MlpSpec, NonFiniteLossError, ParamSet, SgdConfig, backprop, batch_order,
                      cross_entropy, forward, iter_minibatches, log_softmax, sgd_step, softmax)


@dataclass
class TaskData:
    train: LabeledDataset
    test: LabeledDataset
    ood: dict = field(default_factory=dict)  # name -> LabeledDataset
    outliers: Optional[np.ndarray] = None  # auxiliary outlier pool for OE


def train_epoch(spec: MlpSpec, params: ParamSet, velocity: ParamSet, x: np.ndarray, y: np.ndarray,
                sgd: SgdConfig, epoch: int, seed: int, batch_size: int = 64, mask=None,
                outliers: Optional[np.ndarray] = None, oe_weight: float = 0.0) -> float:
    """Run one epoch in place. ``epoch`` is the number of epochs already completed.

    With ``outliers`` and ``oe_weight > 0`` each step adds
    ``oe_weight * CE(uniform, softmax(f(outliers)))`` on an outlier batch of the
    same size as the ID batch.
    """
    lr = sgd.lr_at(epoch)
    order = batch_order(seed, epoch, len(x))
    use_oe = outliers is not None and oe_weight > 0
    if use_oe:
        out_order = np.random.default_rng([int(seed), int(epoch), 1]).permutation(len(outliers))
    total, count = 0.0, 0
    for b, idx in iter_minibatches(order, batch_size):
        xb, yb = x[idx], y[idx]
        n_id = len(idx)
        if use_oe:
            pos = (b * batch_size + np.arange(n_id)) % len(outliers)
            xb = np.concatenate([xb, outliers[out_order[pos]]])
        trace = forward(spec, params, xb)
        logits = trace.logits
        id_logits = logits[:n_id]
        loss = float(cross_entropy(id_logits, yb).mean())
        dlogits = softmax(logits)
        dlogits[np.arange(n_id), yb] -= 1.0
        dlogits[:n_id] /= n_id
        if use_oe:
            out_logits = logits[n_id:]
            k = spec.num_classes
            loss += oe_weight * float(-log_softmax(out_logits).mean(axis=1).mean())
            dlogits[n_id:] = oe_weight * (dlogits[n_id:] - 1.0 / k) / len(out_logits)
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"non-finite loss {loss} at epoch {epoch}, batch {b}", batch_index=b)
        grads, _ = backprop(spec, params, trace, dlogits)
        if mask is not None:
            mask.zero_masked(grads)
        sgd_step(params, grads, velocity, sgd, mask=mask, lr=lr)
        total += loss * n_id
        count += n_id
    return total / max(count, 1)


EpochHook = Callable[[int, ParamSet, Optional[ModelAverager]], None]


def train_span(spec: MlpSpec, params: ParamSet, data: TaskData, sgd: SgdConfig, start_epoch: int,
               end_epoch: int, seed: int, batch_size: int = 64, mask=None,
               averager: Optional[ModelAverager] = None, on_epoch: Optional[EpochHook] = None,
               snapshot_at: Optional[int] = None, oe_weight: float = 0.0):
    """Train ``params`` in place from ``start_epoch`` to ``end_epoch`` with fresh momentum.

    Returns ``(params, snapshot)`` where ``snapshot`` is a copy of the weights
    after ``snapshot_at`` completed epochs (``None`` if not requested or not
    reached). ``on_epoch(epoch, params, averager)`` runs after each epoch,
    after the averager has absorbed it.
    """
    velocity = params.zeros_like()
    snapshot = params.copy() if snapshot_at == start_epoch else None
    for epoch in range(start_epoch, end_epoch):
        train_epoch(spec, params, velocity, data.train.inputs, data.train.labels, sgd, epoch, seed,
                    batch_size, mask, data.outliers, oe_weight)
        done = epoch + 1
        if averager is not None:
            averager.absorb(done, params)
        if snapshot_at == done:
            snapshot = params.copy()
        if on_epoch is not None:
            on_epoch(done, params, averager)
    return params, snapshot


def error_rate(spec: MlpSpec, params: ParamSet, data: LabeledDataset) -> float:
    pred = forward(spec, params, data.inputs).logits.argmax(axis=1)
    return float(np.mean(pred != data.labels))
