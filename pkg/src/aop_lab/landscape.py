"""Detection metrics along random weight-space directions.

For dense layers a "filter" is one output unit, i.e. one row of the
``(out, in)`` weight matrix. Biases get a zero direction under
``per_unit_filterwise`` (they have no row to match).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .datagen import LabeledDataset
from .netcore import MlpSpec, ParamSet, forward
from .scoring import ScorerConfig, compute_scores

NORMALIZATIONS = ("per_unit_filterwise", "global_norm", "none")


@dataclass
class DirectionSpec:
    seed: int = 0
    normalization: str = "per_unit_filterwise"
    alphas: np.ndarray = field(default_factory=lambda: np.linspace(-1.0, 1.0, 21))

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if not np.isfinite(self.alphas).all():
            raise ValueError("alphas must be finite")
        if not np.any(self.alphas == 0.0):
            raise ValueError("alphas must include 0")


def make_direction(params: ParamSet, spec: DirectionSpec) -> ParamSet:
    rng = np.random.default_rng([int(spec.seed), 4242])
    d = ParamSet([rng.standard_normal(w.shape) for w in params.weights],
                 [rng.standard_normal(b.shape) for b in params.biases])
    if spec.normalization == "per_unit_filterwise":
        for w, dw in zip(params.weights, d.weights):
            wn = np.linalg.norm(w, axis=1, keepdims=True)
            dn = np.linalg.norm(dw, axis=1, keepdims=True)
            dw *= np.where(wn > 0, wn / np.maximum(dn, 1e-300), 0.0)
        for db in d.biases:
            db[:] = 0.0
    elif spec.normalization == "global_norm":
        scale = np.linalg.norm(params.flat()) / np.linalg.norm(d.flat())
        d = d.combine(d, scale, 0.0)
    return d


def perturb(params: ParamSet, direction: ParamSet, alpha: float) -> ParamSet:
    if alpha == 0.0:
        return params.copy()
    return params.combine(direction, 1.0, alpha)


def evaluate_model(spec: MlpSpec, params: ParamSet, id_data: LabeledDataset, ood_data: LabeledDataset,
                   scorer: str = "msp", cfg: ScorerConfig | None = None, bank=None) -> dict:
    trace = forward(spec, params, id_data.inputs)
    s_id = compute_scores(scorer, spec, params, id_data.inputs, cfg, bank, trace)
    s_ood = compute_scores(scorer, spec, params, ood_data.inputs, cfg, bank)
    acc = float(np.mean(trace.logits.argmax(axis=1) == id_data.labels))
    if not (np.isfinite(s_id).all() and np.isfinite(s_ood).all()):
        return {"auroc": float("nan"), "fpr95": float("nan"), "acc": acc, "finite": False}
    s = metrics.LabeledScores(s_id, s_ood)
    return {"auroc": metrics.auroc(s), "fpr95": metrics.fpr_at_tpr(s), "acc": acc, "finite": True}


def landscape_scan(spec: MlpSpec, params: ParamSet, direction: ParamSet, alphas, id_data: LabeledDataset,
                   ood_data: LabeledDataset, scorer: str = "msp", cfg: ScorerConfig | None = None) -> list:
    """Rows ``{alpha, auroc, fpr95, acc, finite}``; non-finite rows are flagged, not raised."""
    rows = []
    with np.errstate(over="ignore", invalid="ignore"):
        for alpha in np.asarray(alphas, dtype=np.float64):
            res = evaluate_model(spec, perturb(params, direction, float(alpha)), id_data, ood_data, scorer, cfg)
            rows.append({"alpha": float(alpha), **res})
    return rows


def auroc_range(rows: list, lo: float = -0.5, hi: float = 0.5) -> float:
    vals = [r["auroc"] for r in rows if lo <= r["alpha"] <= hi]
    return float(np.nanmax(vals) - np.nanmin(vals))


def stability(spec: MlpSpec, params: ParamSet, id_data, ood_data, seeds=range(10), alphas=None,
              normalization: str = "per_unit_filterwise", scorer: str = "msp", lo=-0.5, hi=0.5) -> list:
    """AUROC range over ``[lo, hi]`` for each direction seed."""
    alphas = np.linspace(lo, hi, 11) if alphas is None else alphas
    out = []
    for seed in seeds:
        ds = DirectionSpec(seed, normalization, alphas)
        rows = landscape_scan(spec, params, make_direction(params, ds), ds.alphas, id_data, ood_data, scorer)
        out.append(auroc_range(rows, lo, hi))
    return out
