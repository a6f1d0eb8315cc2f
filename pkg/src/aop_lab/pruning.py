"""Weight masks, global magnitude pruning and iterative magnitude pruning
with weight rewinding (plus the fine-tune and random-mask ablations).

Only weight matrices are prunable; biases are always kept. Prune counts use
``floor(fraction * kept)`` with ``fraction`` read as its shortest decimal
repr. Among equal magnitudes at the cut the lower flat index survives.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .averaging import ModelAverager
from .checkpoint import load_checkpoint, save_checkpoint
from .netcore import MlpSpec, ParamSet, SgdConfig, ShapeError, init_params
from .training import TaskData, error_rate, train_span

log = logging.getLogger(__name__)

VARIANTS = ("rewind", "finetune", "random")


class SparsityMask:
    """Per-layer boolean keep masks aligned with the weight matrices."""

    def __init__(self, keep: list):
        self.keep = [np.asarray(k, dtype=bool) for k in keep]

    @classmethod
    def full(cls, params: ParamSet) -> "SparsityMask":
        return cls([np.ones(w.shape, dtype=bool) for w in params.weights])

    @classmethod
    def from_flat(cls, params: ParamSet, bits: np.ndarray) -> "SparsityMask":
        bits = np.asarray(bits, dtype=bool)
        if bits.size != params.weight_count:
            raise ShapeError(f"{bits.size} mask bits for {params.weight_count} weights")
        keep, pos = [], 0
        for w in params.weights:
            keep.append(bits[pos:pos + w.size].reshape(w.shape).copy())
            pos += w.size
        return cls(keep)

    def flat(self) -> np.ndarray:
        return np.concatenate([k.ravel() for k in self.keep])

    @property
    def kept_count(self) -> int:
        return int(sum(np.count_nonzero(k) for k in self.keep))

    @property
    def size(self) -> int:
        return int(sum(k.size for k in self.keep))

    @property
    def sparsity(self) -> float:
        return (self.size - self.kept_count) / self.size

    def check(self, params: ParamSet) -> None:
        if len(self.keep) != params.num_layers:
            raise ShapeError(f"mask has {len(self.keep)} layers, params have {params.num_layers}")
        for i, (k, w) in enumerate(zip(self.keep, params.weights)):
            if k.shape != w.shape:
                raise ShapeError(f"layer {i}: mask shape {k.shape} != weight shape {w.shape}")

    def zero_masked(self, params: ParamSet) -> ParamSet:
        """Zero removed weights of ``params`` in place."""
        self.check(params)
        for k, w in zip(self.keep, params.weights):
            w[~k] = 0.0
        return params

    def copy(self) -> "SparsityMask":
        return SparsityMask([k.copy() for k in self.keep])

    def __eq__(self, other) -> bool:
        return isinstance(other, SparsityMask) and np.array_equal(self.flat(), other.flat())

    def issubset(self, other: "SparsityMask") -> bool:
        """True if every kept weight here is also kept in ``other``."""
        a, b = self.flat(), other.flat()
        return bool(np.all(~a | b))


def apply_mask(params: ParamSet, mask: SparsityMask) -> ParamSet:
    """Copy of ``params`` with removed weights set to exactly zero."""
    return mask.zero_masked(params.copy())


def prune_count(kept: int, fraction: float) -> int:
    return int(Fraction(repr(float(fraction))) * kept // 1)


def _removal_count(mask: SparsityMask, fraction: float) -> int:
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    kept = mask.kept_count
    if kept < 2:
        raise ValueError("need at least 2 surviving weights to prune")
    n_remove = prune_count(kept, fraction)
    if n_remove >= kept:
        raise ValueError("request would prune every remaining weight")
    return n_remove


def global_magnitude_prune(params: ParamSet, mask: SparsityMask, fraction: float) -> SparsityMask:
    """Remove the ``floor(fraction * kept)`` smallest-|w| surviving weights across all layers."""
    mask.check(params)
    n_remove = _removal_count(mask, fraction)
    bits = mask.flat()
    alive = np.flatnonzero(bits)
    mags = np.abs(params.flat_weights()[alive])
    order = np.lexsort((-alive, mags))  # by magnitude, then higher flat index removed first
    new_bits = bits.copy()
    new_bits[alive[order[:n_remove]]] = False
    return SparsityMask.from_flat(params, new_bits)


def random_prune(params: ParamSet, mask: SparsityMask, fraction: float, rng) -> SparsityMask:
    """Remove the same number of surviving weights as magnitude pruning, chosen uniformly."""
    mask.check(params)
    n_remove = _removal_count(mask, fraction)
    bits = mask.flat()
    alive = np.flatnonzero(bits)
    new_bits = bits.copy()
    new_bits[rng.choice(alive, size=n_remove, replace=False)] = False
    return SparsityMask.from_flat(params, new_bits)


@dataclass
class ImpConfig:
    rewind_epoch: int = 2
    train_epochs: int = 100
    rounds: int = 9
    prune_fraction: float = 0.2
    variant: str = "rewind"

    def __post_init__(self):
        if not 0 <= self.rewind_epoch < self.train_epochs:
            raise ValueError("need 0 <= rewind_epoch < train_epochs")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if not 0.0 < self.prune_fraction < 1.0:
            raise ValueError("prune_fraction must lie in (0, 1)")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass
class AveragingSettings:
    t0: int
    mode: str = "running_mean"
    tau: Optional[float] = None

    def make(self, init: ParamSet) -> ModelAverager:
        return ModelAverager(init, self.t0, self.mode, self.tau)


@dataclass
class RoundResult:
    round: int
    mask: SparsityMask
    start_params: ParamSet  # masked weights the round started training from
    params: ParamSet  # trained weights at the end of the round
    averaged: Optional[ParamSet]
    metrics: dict = field(default_factory=dict)


class MissingRewindCheckpoint(FileNotFoundError):
    pass


def _round_dir(out_dir: Path, r: int) -> Path:
    return out_dir / f"round_{r:02d}"


def _write_rounds_csv(out_dir: Path, results: list) -> None:
    keys = []
    for res in results:
        keys += [k for k in res.metrics if k not in keys]
    with open(out_dir / "rounds.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["round", *keys])
        for res in results:
            writer.writerow([res.round, *[repr(res.metrics.get(k, "")) for k in keys]])


def _load_round(out_dir: Path, r: int, spec: MlpSpec) -> Optional[RoundResult]:
    rd = _round_dir(out_dir, r)
    if not (rd / "done").exists():
        return None
    trained = load_checkpoint(rd / "trained.aopckpt")
    start = load_checkpoint(rd / "start.aopckpt")
    metrics = {}
    with open(rd / "metrics.csv", newline="") as fh:
        for key, value in csv.reader(fh):
            metrics[key] = float(value)
    return RoundResult(r, trained.mask, start.params, trained.params, trained.ema, metrics)


def imp_run(spec: MlpSpec, init_seed: int, sgd: SgdConfig, cfg: ImpConfig, data: TaskData, *,
            batch_size: int = 64, train_seed: Optional[int] = None, out_dir=None,
            averaging: Optional[AveragingSettings] = None,
            evaluate: Optional[Callable[[int, ParamSet, Optional[ParamSet]], dict]] = None,
            on_epoch: Optional[Callable] = None, resume: bool = False,
            oe_weight: float = 0.0) -> list:
    """Iterative magnitude pruning.

    Round 0 trains the dense network from its seeded initialisation for
    ``train_epochs`` epochs, keeping a copy of the weights after
    ``rewind_epoch`` epochs. Each later round prunes ``prune_fraction`` of the
    surviving weights of the previous round's trained network and retrains
    epochs ``rewind_epoch .. train_epochs`` with fresh momentum, starting from

    * ``rewind``: the rewind-epoch weights under the new mask,
    * ``finetune``: the previous round's trained weights under the new mask,
    * ``random``: the rewind-epoch weights under a uniformly random mask.

    ``on_epoch(round, epoch, params, averager)`` is called after each epoch.
    When ``out_dir`` is given, every round's start/trained checkpoints (with
    mask and averaged weights) and metrics are written there, and
    ``resume=True`` continues after the last completed round.
    """
    train_seed = init_seed if train_seed is None else train_seed
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    k, T = cfg.rewind_epoch, cfg.train_epochs
    results: list = []
    rewind_params: Optional[ParamSet] = None

    if resume and out_dir is not None:
        r = 0
        while (res := _load_round(out_dir, r, spec)) is not None:
            results.append(res)
            r += 1
        if results:
            rewind_path = out_dir / "rewind.aopckpt"
            if not rewind_path.exists():
                raise MissingRewindCheckpoint(
                    f"{rewind_path} not found; rerun from scratch with an output directory so the "
                    f"epoch-{k} weights are snapshotted")
            rewind_params = load_checkpoint(rewind_path).params
            log.info("resuming after round %d", results[-1].round)

    for r in range(len(results), cfg.rounds + 1):
        if r == 0:
            mask = SparsityMask.full(init_params(spec, init_seed))
            start = init_params(spec, init_seed)
            start_epoch = 0
        else:
            prev = results[-1]
            if cfg.variant == "random":
                rng = np.random.default_rng([int(train_seed), r, 3])
                mask = random_prune(prev.params, prev.mask, cfg.prune_fraction, rng)
            else:
                mask = global_magnitude_prune(prev.params, prev.mask, cfg.prune_fraction)
            if rewind_params is None:
                raise MissingRewindCheckpoint(
                    f"no epoch-{k} snapshot available; the dense round must run with snapshotting")
            base = prev.params if cfg.variant == "finetune" else rewind_params
            start = apply_mask(base, mask)
            start_epoch = k
        start_copy = start.copy()
        averager = averaging.make(start) if averaging is not None else None
        hook = (lambda e, p, a, _r=r: on_epoch(_r, e, p, a)) if on_epoch is not None else None
        params, snap = train_span(spec, start, data, sgd, start_epoch, T, seed=train_seed * 1000 + r,
                                  batch_size=batch_size, mask=mask if r > 0 else None,
                                  averager=averager, on_epoch=hook,
                                  snapshot_at=k if r == 0 else None, oe_weight=oe_weight)
        if r == 0:
            rewind_params = snap
            if out_dir is not None:
                save_checkpoint(out_dir / "rewind.aopckpt", spec, rewind_params, init_seed, k)
        averaged = averager.snapshot() if averager is not None and averager.active else None
        metrics = {
            "kept_count": float(mask.kept_count),
            "sparsity": mask.sparsity,
            "test_err": error_rate(spec, params, data.test),
        }
        if evaluate is not None:
            metrics.update(evaluate(r, params, averaged))
        res = RoundResult(r, mask, start_copy, params, averaged, metrics)
        results.append(res)
        if out_dir is not None:
            rd = _round_dir(out_dir, r)
            rd.mkdir(exist_ok=True)
            save_checkpoint(rd / "start.aopckpt", spec, start_copy, init_seed, start_epoch, mask)
            save_checkpoint(rd / "trained.aopckpt", spec, params, init_seed, T, mask, averaged)
            with open(rd / "metrics.csv", "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                for key, value in metrics.items():
                    writer.writerow([key, repr(float(value))])
            (rd / "done").write_text("")
            _write_rounds_csv(out_dir, results)
        log.info("round %d: kept %d (sparsity %.4f) test_err %.4f", r, mask.kept_count,
                 mask.sparsity, metrics["test_err"])
    return results
