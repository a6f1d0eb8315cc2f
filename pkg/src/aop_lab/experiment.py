"""Experiment configuration, the train/prune/average/score pipeline and its reports.

Configs are JSON objects with a ``schema_version`` key; every section is
optional and falls back to the defaults below. ``load_config`` collects every
problem it finds before raising.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics, plotting, theory
from .averaging import default_t0
from .checkpoint import load_checkpoint, save_checkpoint
from .datagen import BlobTaskSpec, load_csv, make_blob_task, make_outliers
from .landscape import NORMALIZATIONS, DirectionSpec, auroc_range, landscape_scan, make_direction
from .netcore import MlpSpec, ParamSet, SgdConfig, forward, init_params
from .pruning import AveragingSettings, ImpConfig, imp_run, prune_count
from .scoring import BANK_SCORERS, SCORERS, ScorerConfig, compute_scores, fit_feature_bank
from .training import TaskData, train_span

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DETECTION_KEYS = ("auroc", "aupr", "fpr95")
METRICS_HEADER = ("scorer", "auroc", "aupr", "fpr95", "aurc_e3", "e_aurc_e3", "aupr_err", "acc")


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


@dataclass
class NetSection:
    hidden_widths: list = field(default_factory=lambda: [512])
    activation: str = "relu"
    input_dim: Optional[int] = None  # taken from the data when absent
    num_classes: Optional[int] = None


@dataclass
class SgdSection:
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_schedule: list = field(default_factory=list)  # [[epoch, multiplier], ...]


@dataclass
class AveragingSection:
    enabled: bool = True
    t0: Optional[int] = None  # default: half the epochs
    mode: str = "running_mean"
    tau: Optional[float] = None


@dataclass
class ImpSection:
    rewind_epoch: int = 2
    rounds: int = 9
    prune_fraction: float = 0.2
    variant: str = "rewind"


@dataclass
class DataSection:
    kind: str = "blob"  # blob | csv
    blob: dict = field(default_factory=dict)  # BlobTaskSpec fields; seed defaults to the run seed
    n_train: int = 1000
    n_test: int = 1000
    n_ood: int = 1000
    train: Optional[str] = None
    test: Optional[str] = None
    ood: dict = field(default_factory=dict)  # name -> csv path
    csv_header: bool = False


@dataclass
class OeSection:
    weight: float = 0.5
    n_outliers: int = 1000
    spread: float = 1.5
    path: Optional[str] = None  # csv of outlier inputs instead of generated ones


@dataclass
class LandscapeSection:
    normalization: str = "per_unit_filterwise"
    alphas: list = field(default_factory=lambda: [round(a, 10) for a in np.linspace(-1, 1, 21).tolist()])
    seeds: list = field(default_factory=lambda: list(range(10)))
    scorer: str = "msp"
    range_lo: float = -0.5
    range_hi: float = 0.5


@dataclass
class TheorySection:
    eta: float = 0.01
    sigma: float = 1.0
    deltas: list = field(default_factory=lambda: [1.0, 2.0, 3.0])
    d_max: int = 100_000
    d_fixed: int = 50_000
    lambda_step: float = 0.001
    lambda_upper: float = 0.99


@dataclass
class SweepSection:
    widths: list = field(default_factory=lambda: [1, 4, 16, 64, 256, 1024])
    seeds: list = field(default_factory=lambda: [0, 1, 2])


@dataclass
class EvalSection:
    checkpoint: Optional[str] = None  # default: <output_dir>/final.aopckpt
    model: str = "averaged"  # averaged | online


SECTIONS = {
    "net": NetSection, "sgd": SgdSection, "averaging": AveragingSection, "imp": ImpSection,
    "data": DataSection, "oe": OeSection, "landscape": LandscapeSection, "theory": TheorySection,
    "width_sweep": SweepSection, "eval": EvalSection,
}
OPTIONAL_SECTIONS = ("imp", "oe")


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    epochs: int = 100
    batch_size: int = 64
    eval_every: int = 1
    scorers: list = field(default_factory=lambda: ["msp"])
    scorer_options: dict = field(default_factory=dict)
    output_dir: str = "runs/default"
    net: NetSection = field(default_factory=NetSection)
    sgd: SgdSection = field(default_factory=SgdSection)
    averaging: AveragingSection = field(default_factory=AveragingSection)
    imp: Optional[ImpSection] = None
    data: DataSection = field(default_factory=DataSection)
    oe: Optional[OeSection] = None
    landscape: LandscapeSection = field(default_factory=LandscapeSection)
    theory: TheorySection = field(default_factory=TheorySection)
    width_sweep: SweepSection = field(default_factory=SweepSection)
    eval: EvalSection = field(default_factory=EvalSection)

    # ---- derived objects -------------------------------------------------
    def sgd_config(self) -> SgdConfig:
        s = self.sgd
        return SgdConfig(s.learning_rate, s.momentum, s.weight_decay,
                         tuple((int(e), float(m)) for e, m in s.lr_schedule))

    def blob_spec(self) -> BlobTaskSpec:
        kw = dict(self.data.blob)
        kw.setdefault("seed", self.seed)
        return BlobTaskSpec(**kw)

    def mlp_spec(self, input_dim: int, num_classes: int) -> MlpSpec:
        n = self.net
        if n.input_dim is not None and n.input_dim != input_dim:
            raise ValueError(f"net.input_dim={n.input_dim} but the data has {input_dim} features")
        if n.num_classes is not None and n.num_classes != num_classes:
            raise ValueError(f"net.num_classes={n.num_classes} but the data has {num_classes} classes")
        return MlpSpec(input_dim, tuple(int(w) for w in n.hidden_widths), num_classes, n.activation)

    def imp_config(self) -> Optional[ImpConfig]:
        if self.imp is None:
            return None
        i = self.imp
        return ImpConfig(i.rewind_epoch, self.epochs, i.rounds, i.prune_fraction, i.variant)

    def averaging_settings(self) -> Optional[AveragingSettings]:
        a = self.averaging
        if not a.enabled:
            return None
        return AveragingSettings(default_t0(self.epochs) if a.t0 is None else a.t0, a.mode, a.tau)

    def scorer_config(self) -> ScorerConfig:
        return ScorerConfig.from_dict(self.scorer_options)

    # ---- (de)serialisation ----------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        problems: list = []
        if not isinstance(raw, dict):
            raise ConfigError(["top level: expected a JSON object"])
        known = {f.name for f in fields(cls)}
        for key in sorted(set(raw) - known):
            problems.append(f"{key}: unknown key")
        version = raw.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            problems.append(f"schema_version: unsupported version {version!r} (expected {SCHEMA_VERSION})")
        kwargs = {}
        for key in known & set(raw):
            if key in SECTIONS:
                section = _build_section(SECTIONS[key], raw[key], key, problems,
                                         optional=key in OPTIONAL_SECTIONS)
                if section is not None or raw[key] is None:
                    kwargs[key] = section
            else:
                kwargs[key] = raw[key]
        try:
            cfg = cls(**kwargs)
        except TypeError as exc:
            problems.append(str(exc))
            raise ConfigError(problems) from None
        problems += cfg.problems()
        if problems:
            raise ConfigError(problems)
        return cfg

    def problems(self) -> list:
        """Every validation failure of this config (empty when valid)."""
        out = []

        def need(cond, msg):
            if not cond:
                out.append(msg)

        def check(label, fn):
            try:
                fn()
            except (TypeError, ValueError) as exc:
                out.append(f"{label}: {exc}")

        need(_is_int(self.seed), "seed: must be an integer")
        need(_is_int(self.epochs) and self.epochs >= 1, "epochs: must be an integer >= 1")
        need(_is_int(self.batch_size) and self.batch_size >= 1, "batch_size: must be an integer >= 1")
        need(_is_int(self.eval_every) and self.eval_every >= 1, "eval_every: must be an integer >= 1")
        need(isinstance(self.output_dir, str) and self.output_dir != "", "output_dir: must be a non-empty string")
        if not isinstance(self.scorers, list) or not self.scorers:
            out.append("scorers: must be a non-empty list")
        else:
            for s in self.scorers:
                need(s in SCORERS, f"scorers: unknown scorer {s!r}; choose from {list(SCORERS)}")
            need(len(set(self.scorers)) == len(self.scorers), "scorers: duplicates")
        if isinstance(self.scorer_options, dict):
            check("scorer_options", self.scorer_config)
        else:
            out.append("scorer_options: must be an object")
        n = self.net
        if not isinstance(n.hidden_widths, list) or not all(_is_int(w) and w >= 1 for w in n.hidden_widths):
            out.append("net.hidden_widths: must be a list of positive integers")
        else:
            check("net", lambda: MlpSpec(n.input_dim or 1, tuple(n.hidden_widths), n.num_classes or 2,
                                         n.activation))
        check("sgd", self.sgd_config)
        a = self.averaging
        if a.enabled:
            check("averaging", lambda: self.averaging_settings().make(ParamSet([np.zeros((1, 1))],
                                                                              [np.zeros(1)])))
            if _is_int(self.epochs) and a.t0 is not None and _is_int(a.t0):
                need(a.t0 < self.epochs, f"averaging.t0: must be below epochs ({self.epochs})")
        if self.imp is not None and _is_int(self.epochs):
            check("imp", self.imp_config)
        d = self.data
        if d.kind == "blob":
            check("data.blob", self.blob_spec)
            for name in ("n_train", "n_test", "n_ood"):
                v = getattr(d, name)
                need(_is_int(v) and v >= 1, f"data.{name}: must be a positive integer")
        elif d.kind == "csv":
            need(bool(d.train), "data.train: required for csv data")
            need(bool(d.test), "data.test: required for csv data")
            need(isinstance(d.ood, dict) and len(d.ood) > 0, "data.ood: needs at least one named csv path")
        else:
            out.append(f"data.kind: must be 'blob' or 'csv', got {d.kind!r}")
        if self.oe is not None:
            need(self.oe.weight >= 0, "oe.weight: must be >= 0")
            need(_is_int(self.oe.n_outliers) and self.oe.n_outliers >= 1, "oe.n_outliers: must be >= 1")
            need(d.kind == "blob" or self.oe.path, "oe.path: required when data.kind is csv")
        ls = self.landscape
        need(ls.normalization in NORMALIZATIONS, f"landscape.normalization: must be one of {NORMALIZATIONS}")
        check("landscape.alphas", lambda: DirectionSpec(0, "none", ls.alphas))
        need(ls.scorer in SCORERS, f"landscape.scorer: unknown scorer {ls.scorer!r}")
        need(ls.range_lo < ls.range_hi, "landscape: range_lo must be below range_hi")
        t = self.theory
        need(t.sigma > 0, "theory.sigma: must be positive")
        need(0 < t.lambda_upper < 1, "theory.lambda_upper: must lie in (0, 1)")
        need(t.lambda_step > 0, "theory.lambda_step: must be positive")
        need(_is_int(t.d_max) and t.d_max >= 0 and _is_int(t.d_fixed) and t.d_fixed >= 0,
             "theory: d_max and d_fixed must be non-negative integers")
        need(all(_is_int(w) and w >= 1 for w in self.width_sweep.widths), "width_sweep.widths: positive integers")
        need(self.eval.model in ("averaged", "online"), "eval.model: must be 'averaged' or 'online'")
        return out


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _build_section(cls, raw, where: str, problems: list, optional: bool = False):
    if raw is None:
        if not optional:
            problems.append(f"{where}: may not be null")
        return None
    if not isinstance(raw, dict):
        problems.append(f"{where}: expected an object")
        return None
    names = {f.name for f in fields(cls)}
    for key in sorted(set(raw) - names):
        problems.append(f"{where}.{key}: unknown key")
    return cls(**{k: v for k, v in raw.items() if k in names})


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: not valid JSON ({exc})"]) from None
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# data


def load_task(cfg: ExperimentConfig) -> TaskData:
    d = cfg.data
    outliers = None
    if d.kind == "blob":
        bs = cfg.blob_spec()
        train, test, ood = make_blob_task(bs, d.n_train, d.n_test, d.n_ood)
        oods = {"ood": ood}
        if cfg.oe is not None and cfg.oe.path is None:
            outliers = make_outliers(bs, cfg.oe.n_outliers, cfg.seed, cfg.oe.spread)
    else:
        train = load_csv(d.train, d.csv_header, "id_train")
        test = load_csv(d.test, d.csv_header, "id_test")
        oods = {name: load_csv(p, d.csv_header, "ood") for name, p in d.ood.items()}
    if cfg.oe is not None and cfg.oe.path is not None:
        outliers = load_csv(cfg.oe.path, d.csv_header, "ood").inputs
    return TaskData(train, test, oods, outliers)


def task_spec(cfg: ExperimentConfig, task: TaskData) -> MlpSpec:
    num_classes = int(max(task.train.labels.max(), task.test.labels.max())) + 1
    if cfg.data.kind == "blob":
        num_classes = cfg.blob_spec().num_classes
    return cfg.mlp_spec(task.train.inputs.shape[1], num_classes)


# ---------------------------------------------------------------------------
# evaluation


def _bank_or_none(spec, params, task, scorers, scfg):
    if not any(s in BANK_SCORERS for s in scorers):
        return None
    try:
        return fit_feature_bank(spec, params, task.train, scfg)
    except (np.linalg.LinAlgError, ValueError) as exc:
        log.warning("feature bank unavailable (%s); bank scorers report NaN", exc)
        return None


def evaluate_model(spec: MlpSpec, params: ParamSet, task: TaskData, scorers, scfg: ScorerConfig) -> dict:
    """Flat metric dict: train/test error and ``{scorer}_{ood}_{auroc|aupr|fpr95}``."""
    out = {}
    with np.errstate(over="ignore", invalid="ignore"):
        tr = forward(spec, params, task.train.inputs)
        te = forward(spec, params, task.test.inputs)
        out["train_err"] = float(np.mean(tr.logits.argmax(axis=1) != task.train.labels))
        out["test_err"] = float(np.mean(te.logits.argmax(axis=1) != task.test.labels))
        bank = _bank_or_none(spec, params, task, scorers, scfg)
        for s in scorers:
            if s in BANK_SCORERS and bank is None:
                s_id = None
            else:
                s_id = compute_scores(s, spec, params, task.test.inputs, scfg, bank, te)
            for name, ood in task.ood.items():
                if s_id is None:
                    vals = dict.fromkeys(DETECTION_KEYS, float("nan"))
                else:
                    s_ood = compute_scores(s, spec, params, ood.inputs, scfg, bank)
                    if np.isfinite(s_id).all() and np.isfinite(s_ood).all():
                        vals = metrics.detection_metrics(s_id, s_ood)
                    else:
                        vals = dict.fromkeys(DETECTION_KEYS, float("nan"))
                for k in DETECTION_KEYS:
                    out[f"{s}_{name}_{k}"] = float(vals[k])
    return out


def summary_metrics(spec: MlpSpec, params: ParamSet, task: TaskData, scorers, scfg: ScorerConfig) -> dict:
    """Per scorer: detection metrics averaged over OOD sets, plus selective-prediction
    metrics on the ID test set using the same score as confidence."""
    te = forward(spec, params, task.test.inputs)
    correct = te.logits.argmax(axis=1) == task.test.labels
    bank = _bank_or_none(spec, params, task, scorers, scfg)
    out = {}
    for s in scorers:
        row = dict.fromkeys(METRICS_HEADER[1:], float("nan"))
        row["acc"] = float(correct.mean())
        if not (s in BANK_SCORERS and bank is None):
            s_id = compute_scores(s, spec, params, task.test.inputs, scfg, bank, te)
            det = [metrics.detection_metrics(s_id, compute_scores(s, spec, params, o.inputs, scfg, bank))
                   for o in task.ood.values()]
            for k in DETECTION_KEYS:
                row[k] = float(np.mean([m[k] for m in det]))
            mis = metrics.misclassification_metrics(s_id, correct)
            row["aurc_e3"] = 1e3 * mis["aurc"]
            row["e_aurc_e3"] = 1e3 * mis["e_aurc"]
            row["aupr_err"] = mis["aupr_err"]
        out[s] = row
    return out


# ---------------------------------------------------------------------------
# run log


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


@dataclass
class RunLog:
    """One row per evaluation point, ordered by ``(round, epoch)``.

    Columns are ``round, epoch, sparsity`` followed by ``{variant}_{metric}``
    for ``variant`` in ``online`` (and ``ma`` when averaging is on). Before the
    averaging start epoch the MA columns repeat the online values.
    """
    columns: list
    rows: list = field(default_factory=list)
    label: str = "run"
    summary: dict = field(default_factory=dict)  # scorer -> metrics.csv row

    def append(self, row: dict) -> None:
        if self.rows:
            last = (self.rows[-1]["round"], self.rows[-1]["epoch"])
            if (row["round"], row["epoch"]) <= last:
                raise ValueError(f"row {(row['round'], row['epoch'])} does not follow {last}")
        self.rows.append({c: row[c] for c in self.columns})

    def series(self, column: str, round_: Optional[int] = None):
        rows = [r for r in self.rows if round_ is None or r["round"] == round_]
        return [r["epoch"] for r in rows], [r[column] for r in rows]

    def final_rows(self) -> list:
        """Last row of every round."""
        last = {}
        for r in self.rows:
            last[r["round"]] = r
        return [last[k] for k in sorted(last)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in self.columns])

    @classmethod
    def from_csv(cls, path, label: str = "run") -> "RunLog":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            columns = next(reader)
            log_ = cls(columns, label=label)
            for values in reader:
                log_.rows.append({c: (int(v) if c in ("round", "epoch") else float(v))
                                  for c, v in zip(columns, values)})
        return log_

    def save(self, out_dir) -> None:
        out_dir = Path(out_dir)
        self.to_csv(out_dir / "runlog.csv")
        (out_dir / "summary.json").write_text(json.dumps({"label": self.label, "summary": self.summary},
                                                         indent=2) + "\n")

    @classmethod
    def load(cls, out_dir) -> "RunLog":
        out_dir = Path(out_dir)
        log_ = cls.from_csv(out_dir / "runlog.csv")
        meta = out_dir / "summary.json"
        if meta.exists():
            m = json.loads(meta.read_text())
            log_.label, log_.summary = m["label"], m["summary"]
        return log_


def runlog_columns(scorers, ood_names, averaging: bool) -> list:
    per_model = ["train_err", "test_err"] + [f"{s}_{o}_{k}" for s in scorers for o in ood_names
                                             for k in DETECTION_KEYS]
    variants = ("online", "ma") if averaging else ("online",)
    return ["round", "epoch", "sparsity"] + [f"{v}_{m}" for v in variants for m in per_model]


def primary_column(log_: RunLog, variant: str = "online") -> Optional[str]:
    for c in log_.columns:
        if c.startswith(f"{variant}_") and c.endswith("_auroc"):
            return c
    return None


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class RunResult:
    log: RunLog
    spec: MlpSpec
    task: TaskData
    rounds: list  # RoundResult for IMP runs, empty for dense runs
    final_online: ParamSet
    final_averaged: Optional[ParamSet]
    dense_online: ParamSet
    out_dir: Path


def run_aop(cfg: ExperimentConfig, out_dir=None, resume: bool = False, dense: bool = False) -> RunResult:
    """Train (dense, or IMP rounds when ``cfg.imp`` is set and ``dense`` is false)
    with model averaging, score every ``eval_every`` epochs and persist
    checkpoints, ``runlog.csv`` and the report files."""
    problems = cfg.problems()
    if problems:
        raise ConfigError(problems)
    out_dir = Path(out_dir if out_dir is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(out_dir / "config.json")
    task = load_task(cfg)
    spec = task_spec(cfg, task)
    scfg = cfg.scorer_config()
    sgd = cfg.sgd_config()
    avg = cfg.averaging_settings()
    imp = None if dense else cfg.imp_config()
    columns = runlog_columns(cfg.scorers, list(task.ood), avg is not None)
    oe_weight = cfg.oe.weight if cfg.oe is not None else 0.0

    def make_row(r, epoch, params, averager, kept):
        row = {"round": r, "epoch": epoch, "sparsity": (total_weights - kept) / total_weights}
        online = evaluate_model(spec, params, task, cfg.scorers, scfg)
        row.update({f"online_{k}": v for k, v in online.items()})
        if avg is not None:
            if averager is not None and averager.active:
                ma = evaluate_model(spec, averager.avg, task, cfg.scorers, scfg)
            else:
                ma = online
            row.update({f"ma_{k}": v for k, v in ma.items()})
        return row

    def due(epoch):
        return epoch % cfg.eval_every == 0 or epoch == cfg.epochs

    total_weights = init_params(spec, cfg.seed).weight_count
    runlog = RunLog(columns, label=out_dir.name)

    if imp is None:
        params = init_params(spec, cfg.seed)
        averager = avg.make(params) if avg is not None else None

        def hook(epoch, p, a):
            if due(epoch):
                runlog.append(make_row(0, epoch, p, a, total_weights))

        train_span(spec, params, task, sgd, 0, cfg.epochs, seed=cfg.seed * 1000, batch_size=cfg.batch_size,
                   averager=averager, on_epoch=hook, oe_weight=oe_weight)
        averaged = averager.snapshot() if averager is not None and averager.active else None
        save_checkpoint(out_dir / "final.aopckpt", spec, params, cfg.seed, cfg.epochs, None, averaged)
        rounds, final_online, dense_online = [], params, params
    else:
        imp_dir = out_dir / "imp"
        current: list = []
        kept = [total_weights]
        for _ in range(imp.rounds):
            kept.append(kept[-1] - prune_count(kept[-1], imp.prune_fraction))

        def hook(r, epoch, p, a):
            if due(epoch):
                current.append(make_row(r, epoch, p, a, kept[r]))
            if epoch == cfg.epochs:
                rd = imp_dir / f"round_{r:02d}"
                rd.mkdir(parents=True, exist_ok=True)
                RunLog(columns, [row for row in current if row["round"] == r]).to_csv(rd / "runlog.csv")

        rounds = imp_run(spec, cfg.seed, sgd, imp, task, batch_size=cfg.batch_size, train_seed=cfg.seed,
                         out_dir=imp_dir, averaging=avg, on_epoch=hook, resume=resume, oe_weight=oe_weight)
        for res in rounds:
            part = RunLog.from_csv(imp_dir / f"round_{res.round:02d}" / "runlog.csv")
            for row in part.rows:
                runlog.append(row)
        last = rounds[-1]
        averaged = last.averaged
        final_online, dense_online = last.params, rounds[0].params
        save_checkpoint(out_dir / "final.aopckpt", spec, last.params, cfg.seed, cfg.epochs, last.mask, averaged)
        save_checkpoint(out_dir / "dense.aopckpt", spec, rounds[0].params, cfg.seed, cfg.epochs, None,
                        rounds[0].averaged)

    reported = averaged if averaged is not None else final_online
    runlog.summary = summary_metrics(spec, reported, task, cfg.scorers, scfg)
    runlog.save(out_dir)
    emit_report([runlog], out_dir)
    return RunResult(runlog, spec, task, rounds, final_online, averaged, dense_online, out_dir)


# ---------------------------------------------------------------------------
# reports


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def emit_report(run_logs, out_dir) -> list:
    """Write ``metrics.csv``, ``curves.csv``, ``epoch_auroc.svg`` and ``sparsity_auroc.svg``.

    ``metrics.csv`` holds one row per scorer of each log's reported model; with
    several logs the scorer cell is prefixed ``label/``. ``curves.csv`` is the
    concatenation of the logs with a leading ``run`` column. Returns the paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_logs = list(run_logs)
    multi = len(run_logs) > 1
    metric_rows = []
    for lg in run_logs:
        for scorer, vals in lg.summary.items():
            name = f"{lg.label}/{scorer}" if multi else scorer
            metric_rows.append([name, *[vals[k] for k in METRICS_HEADER[1:]]])
    paths = [out_dir / "metrics.csv", out_dir / "curves.csv", out_dir / "epoch_auroc.svg",
             out_dir / "sparsity_auroc.svg"]
    _write_csv(paths[0], METRICS_HEADER, metric_rows)

    columns: list = []
    for lg in run_logs:
        columns += [c for c in lg.columns if c not in columns]
    if not columns:
        columns = ["round", "epoch", "sparsity"]
    curve_rows = [[lg.label, *[r.get(c, float("nan")) for c in columns]] for lg in run_logs for r in lg.rows]
    _write_csv(paths[1], ["run", *columns], curve_rows)

    epoch_series, sparsity_series = [], []
    for lg in run_logs:
        prefix = f"{lg.label} " if multi else ""
        rounds = sorted({r["round"] for r in lg.rows})
        shown = rounds[:1] + rounds[-1:] if len(rounds) > 1 else rounds
        for variant in ("online", "ma"):
            col = primary_column(lg, variant)
            if col is None:
                continue
            for rd in shown:
                xs, ys = lg.series(col, rd)
                epoch_series.append((f"{prefix}{variant} round {rd}", xs, ys))
            finals = lg.final_rows()
            sparsity_series.append((f"{prefix}{variant}", [r["sparsity"] for r in finals],
                                    [r[col] for r in finals]))
    plotting.line_plot(paths[2], epoch_series, "epoch", "AUROC")
    plotting.line_plot(paths[3], sparsity_series, "sparsity", "final AUROC")
    return paths


def feature_diff_report(spec: MlpSpec, params_dense: ParamSet, params_sparse: ParamSet, id_batch,
                        ood_batch):
    """``|mean ID feature - mean OOD feature|`` per penultimate coordinate, as ``(1, F)``
    matrices for the dense and the sparse model."""
    id_batch, ood_batch = np.asarray(id_batch, dtype=np.float64), np.asarray(ood_batch, dtype=np.float64)
    if min(len(id_batch), len(ood_batch)) < 8:
        warnings.warn("feature differences from fewer than 8 samples are noisy", stacklevel=2)
    out = []
    for p in (params_dense, params_sparse):
        f_id = forward(spec, p, id_batch).features.mean(axis=0)
        f_ood = forward(spec, p, ood_batch).features.mean(axis=0)
        out.append(np.abs(f_id - f_ood)[None, :])
    return out[0], out[1]


def write_feature_diff(path, dense: np.ndarray, sparse: np.ndarray) -> None:
    f = dense.shape[1]
    _write_csv(path, ["model", *[f"f{i}" for i in range(f)]],
               [["dense", *dense[0].tolist()], ["sparse", *sparse[0].tolist()]])


def _sweep_worker(args):
    cfg_dict, out = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    res = run_aop(cfg, out)
    final = res.log.final_rows()[-1]
    col = primary_column(res.log, "online")
    return 1.0 - final["online_test_err"], final[col]


def sweep_threads() -> int:
    try:
        return max(1, int(os.environ.get("AOP_LAB_THREADS", "1")))
    except ValueError:
        return 1


def width_sweep(cfg: ExperimentConfig, widths=None, seeds=None, out_dir=None) -> list:
    """One full run per (width, seed); writes ``width_sweep.csv``,
    ``width_summary.csv`` and ``width_sweep.svg``.

    Runs are independent and go to disjoint subdirectories, spread over up to
    ``AOP_LAB_THREADS`` worker processes. Accuracy trend and AUROC argmax are
    reported in the summary, never asserted.
    """
    widths = list(cfg.width_sweep.widths if widths is None else widths)
    seeds = list(cfg.width_sweep.seeds if seeds is None else seeds)
    out_dir = Path(out_dir if out_dir is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    depth = max(1, len(cfg.net.hidden_widths))
    jobs, keys = [], []
    for w in widths:
        for s in seeds:
            c = replace(cfg, seed=int(s), net=replace(cfg.net, hidden_widths=[int(w)] * depth))
            jobs.append((c.to_dict(), str(out_dir / f"w{w}_s{s}")))
            keys.append((int(w), int(s)))
    threads = min(sweep_threads(), len(jobs))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_worker, jobs))
    else:
        results = [_sweep_worker(j) for j in jobs]
    rows = [{"width": w, "seed": s, "test_acc": acc, "final_auroc": au}
            for (w, s), (acc, au) in zip(keys, results)]
    _write_csv(out_dir / "width_sweep.csv", ["width", "seed", "test_acc", "final_auroc"],
               [[r["width"], r["seed"], r["test_acc"], r["final_auroc"]] for r in rows])
    med_acc = [float(np.median([r["test_acc"] for r in rows if r["width"] == w])) for w in widths]
    med_au = [float(np.median([r["final_auroc"] for r in rows if r["width"] == w])) for w in widths]
    best = widths[int(np.nanargmax(med_au))] if not all(math.isnan(a) for a in med_au) else widths[0]
    acc_trend = all(b >= a for a, b in zip(med_acc, med_acc[1:]))
    peak = int(np.nanargmax(med_au)) if not all(math.isnan(a) for a in med_au) else 0
    unimodal = (all(b >= a for a, b in zip(med_au[:peak + 1], med_au[1:peak + 1]))
                and all(b <= a for a, b in zip(med_au[peak:], med_au[peak + 1:])))
    _write_csv(out_dir / "width_summary.csv", ["width", "median_test_acc", "median_final_auroc"],
               [[w, a, u] for w, a, u in zip(widths, med_acc, med_au)])
    with open(out_dir / "width_summary.csv", "a") as fh:
        fh.write(f"# auroc_argmax_width={best} acc_non_decreasing={acc_trend} auroc_unimodal={unimodal}\n")
    plotting.line_plot(out_dir / "width_sweep.svg",
                       [("median test acc", widths, med_acc), ("median final AUROC", widths, med_au)],
                       "hidden width", "value")
    return rows


# ---------------------------------------------------------------------------
# stand-alone commands


def _checkpoint_for(cfg: ExperimentConfig, out_dir: Path):
    path = Path(cfg.eval.checkpoint) if cfg.eval.checkpoint else out_dir / "final.aopckpt"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `train` or `imp` first")
    return load_checkpoint(path)


def run_eval(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Score the stored checkpoint: ``scores_<scorer>.csv`` (``sample_id,provenance,score``),
    ``id_outcomes.csv`` and ``metrics.csv``."""
    out_dir = Path(out_dir if out_dir is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ck = _checkpoint_for(cfg, out_dir)
    task = load_task(cfg)
    spec = ck.spec
    params = ck.ema if cfg.eval.model == "averaged" and ck.ema is not None else ck.params
    scfg = cfg.scorer_config()
    bank = _bank_or_none(spec, params, task, cfg.scorers, scfg)
    blocks = [("id_test", task.test.inputs)]
    for name, ood in task.ood.items():
        blocks.append(("ood" if list(task.ood) == ["ood"] else f"ood:{name}", ood.inputs))
    for s in cfg.scorers:
        rows, sid = [], 0
        for prov, x in blocks:
            vals = (compute_scores(s, spec, params, x, scfg, bank) if not (s in BANK_SCORERS and bank is None)
                    else np.full(len(x), np.nan))
            for v in vals:
                rows.append([sid, prov, float(v)])
                sid += 1
        _write_csv(out_dir / f"scores_{s}.csv", ["sample_id", "provenance", "score"], rows)
    pred = forward(spec, params, task.test.inputs).logits.argmax(axis=1)
    _write_csv(out_dir / "id_outcomes.csv", ["sample_id", "label", "prediction", "correct"],
               [[i, int(y), int(p), int(y == p)] for i, (y, p) in enumerate(zip(task.test.labels, pred))])
    summary = summary_metrics(spec, params, task, cfg.scorers, scfg)
    _write_csv(out_dir / "metrics.csv", METRICS_HEADER,
               [[s, *[v[k] for k in METRICS_HEADER[1:]]] for s, v in summary.items()])
    return summary


LANDSCAPE_HEADER = ("direction_seed", "alpha", "auroc", "fpr95", "acc")


def run_landscape(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Scan the stored online (``landscape.csv``) and averaged (``landscape_ma.csv``)
    weights along ``landscape.seeds`` random directions; returns the per-direction
    AUROC ranges and writes them to ``landscape_summary.csv``."""
    out_dir = Path(out_dir if out_dir is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ck = _checkpoint_for(cfg, out_dir)
    task = load_task(cfg)
    ood = next(iter(task.ood.values()))
    ls = cfg.landscape
    models = [("online", ck.params, "landscape.csv")]
    if ck.ema is not None:
        models.append(("ma", ck.ema, "landscape_ma.csv"))
    ranges, summary_rows = {}, []
    for label, params, fname in models:
        rows = []
        ranges[label] = []
        for seed in ls.seeds:
            ds = DirectionSpec(int(seed), ls.normalization, ls.alphas)
            scan = landscape_scan(ck.spec, params, make_direction(params, ds), ds.alphas, task.test, ood,
                                  ls.scorer, cfg.scorer_config())
            rows += [[int(seed), r["alpha"], r["auroc"], r["fpr95"], r["acc"]] for r in scan]
            rng_ = auroc_range(scan, ls.range_lo, ls.range_hi)
            ranges[label].append(rng_)
            summary_rows.append([label, int(seed), rng_])
        _write_csv(out_dir / fname, LANDSCAPE_HEADER, rows)
    _write_csv(out_dir / "landscape_summary.csv", ["model", "direction_seed", "auroc_range"], summary_rows)
    for label, vals in ranges.items():
        log.info("%s: median AUROC range %.5f over %d directions", label, float(np.median(vals)), len(vals))
    return ranges


def run_theory(cfg: ExperimentConfig, out_dir=None) -> tuple:
    """Closed-form risk sweeps: ``fig4a.csv`` (``d,delta,r_id,r_ood``) and
    ``fig4b.csv`` (``lambda,r_id,r_ood`` at ``d_fixed``), each with an SVG."""
    out_dir = Path(out_dir if out_dir is not None else cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = cfg.theory
    template = theory.TheoryParams(d=0, eta=t.eta, sigma=t.sigma, delta=1.0)
    rows_a = theory.sweep_d(template, theory.default_d_grid(t.d_max), t.deltas)
    _write_csv(out_dir / "fig4a.csv", ["d", "delta", "r_id", "r_ood"],
               [[r["d"], r["delta"], r["r_id"], r["r_ood"]] for r in rows_a])
    series = []
    for delta in t.deltas:
        sel = [r for r in rows_a if r["delta"] == float(delta)]
        if delta == t.deltas[0]:
            series.append(("r_id", [r["d"] for r in sel], [r["r_id"] for r in sel]))
        series.append((f"r_ood delta={delta:g}", [r["d"] for r in sel], [r["r_ood"] for r in sel]))
    plotting.line_plot(out_dir / "fig4a.svg", series, "d (common features)", "risk")

    lam_params = replace(template, d=int(t.d_fixed), delta=float(t.deltas[0]))
    rows_b = theory.sweep_lambda(lam_params, theory.default_lambda_grid(t.lambda_step, t.lambda_upper))
    _write_csv(out_dir / "fig4b.csv", ["lambda", "r_id", "r_ood"],
               [[r["lambda"], r["r_id"], r["r_ood"]] for r in rows_b])
    plotting.line_plot(out_dir / "fig4b.svg",
                       [("r_id", [r["lambda"] for r in rows_b], [r["r_id"] for r in rows_b]),
                        ("r_ood", [r["lambda"] for r in rows_b], [r["r_ood"] for r in rows_b])],
                       "lambda", "risk")
    return rows_a, rows_b
