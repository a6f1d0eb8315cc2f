"""Threshold-free OOD-detection and misclassification-detection metrics.

Convention: higher score means more in-distribution, and ID samples are the
positive class. Ties at a threshold are always grouped (a threshold admits
every sample whose score is ``>=`` it); AUROC gives tied pairs half credit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels


class EmptyScoresError(ValueError):
    pass


@dataclass
class LabeledScores:
    id_scores: np.ndarray
    ood_scores: np.ndarray

    def __post_init__(self):
        self.id_scores = np.asarray(self.id_scores, dtype=np.float64).ravel()
        self.ood_scores = np.asarray(self.ood_scores, dtype=np.float64).ravel()
        if self.id_scores.size == 0 or self.ood_scores.size == 0:
            raise EmptyScoresError("both ID and OOD scores must be non-empty")
        if not (np.isfinite(self.id_scores).all() and np.isfinite(self.ood_scores).all()):
            raise ValueError("scores must be finite")

    def pooled(self):
        scores = np.concatenate([self.id_scores, self.ood_scores])
        is_id = np.r_[np.ones(self.id_scores.size, bool), np.zeros(self.ood_scores.size, bool)]
        return scores, is_id


@dataclass
class ConfidenceOutcomes:
    confidence: np.ndarray
    correct: np.ndarray

    def __post_init__(self):
        self.confidence = np.asarray(self.confidence, dtype=np.float64).ravel()
        self.correct = np.asarray(self.correct, dtype=bool).ravel()
        if self.confidence.size == 0:
            raise EmptyScoresError("empty confidence array")
        if self.confidence.shape != self.correct.shape:
            raise ValueError("confidence and correct must have equal length")


@dataclass
class RocCurve:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray


def _as_scores(s, ood=None) -> LabeledScores:
    if ood is not None:
        return LabeledScores(s, ood)
    if not isinstance(s, LabeledScores):
        raise TypeError("expected LabeledScores or (id_scores, ood_scores)")
    return s


def _as_outcomes(c, correct=None) -> ConfidenceOutcomes:
    if correct is not None:
        return ConfidenceOutcomes(c, correct)
    if not isinstance(c, ConfidenceOutcomes):
        raise TypeError("expected ConfidenceOutcomes or (confidence, correct)")
    return c


def roc_curve(s, ood=None) -> RocCurve:
    s = _as_scores(s, ood)
    scores, is_id = s.pooled()
    thr, tp, fp = kernels.tie_sweep(scores, is_id)
    return RocCurve(
        np.r_[np.inf, thr],
        np.r_[0.0, tp / s.id_scores.size],
        np.r_[0.0, fp / s.ood_scores.size],
    )


def auroc(s, ood=None) -> float:
    """Area under the ROC curve by trapezoidal integration over the tie-grouped sweep."""
    curve = roc_curve(s, ood)
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) * 0.5))


def auroc_mann_whitney(s, ood=None) -> float:
    """Pairwise count ``(#{id > ood} + ties / 2) / (n_id * n_ood)``."""
    s = _as_scores(s, ood)
    greater, ties = kernels.pair_counts(s.id_scores, s.ood_scores)
    return (greater + 0.5 * ties) / (s.id_scores.size * s.ood_scores.size)


def _average_precision(scores, is_pos) -> float:
    n_pos = int(np.count_nonzero(is_pos))
    if n_pos == 0:
        raise EmptyScoresError("no positives")
    _, tp, fp = kernels.tie_sweep(scores, is_pos)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def aupr(s, ood=None) -> float:
    """Area under precision-recall with ID positive, step interpolation."""
    s = _as_scores(s, ood)
    return _average_precision(*s.pooled())


def fpr_at_tpr(s, ood=None, tpr_target: float = 0.95) -> float:
    """Fraction of OOD scores at or above the highest threshold that keeps
    at least ``tpr_target`` of the ID scores."""
    s = _as_scores(s, ood)
    if not 0.0 < tpr_target <= 1.0:
        raise ValueError("tpr_target must lie in (0, 1]")
    scores, is_id = s.pooled()
    _, tp, fp = kernels.tie_sweep(scores, is_id)
    need = math.ceil(tpr_target * s.id_scores.size - 1e-9)
    idx = int(np.argmax(tp >= need))
    return float(fp[idx] / s.ood_scores.size)


def _aurc_from_errors(errors_in_order: np.ndarray) -> float:
    n = errors_in_order.size
    risk = np.cumsum(errors_in_order) / np.arange(1, n + 1)
    return float(risk.mean())


def aurc(c, correct=None) -> float:
    """Mean selective risk over coverages i/n, most confident first (stable ties)."""
    c = _as_outcomes(c, correct)
    order = np.argsort(-c.confidence, kind="stable")
    return _aurc_from_errors((~c.correct[order]).astype(np.float64))


def optimal_aurc(c, correct=None) -> float:
    c = _as_outcomes(c, correct)
    return _aurc_from_errors(np.sort((~c.correct).astype(np.float64)))


def e_aurc(c, correct=None) -> float:
    c = _as_outcomes(c, correct)
    return aurc(c) - optimal_aurc(c)


def aupr_err(c, correct=None) -> float:
    """Precision-recall area with misclassified samples as positives, ranked by ``-confidence``."""
    c = _as_outcomes(c, correct)
    return _average_precision(-c.confidence, ~c.correct)


def detection_metrics(id_scores, ood_scores) -> dict:
    s = LabeledScores(id_scores, ood_scores)
    return {"auroc": auroc(s), "aupr": aupr(s), "fpr95": fpr_at_tpr(s)}


def misclassification_metrics(confidence, correct) -> dict:
    """AURC family plus AUROC/FPR95 with correct predictions as positives.

    Entries that are undefined for the input (no errors, or no correct
    predictions) are NaN.
    """
    c = ConfidenceOutcomes(confidence, correct)
    out = {"aurc": aurc(c), "e_aurc": e_aurc(c), "acc": float(c.correct.mean())}
    if c.correct.all() or not c.correct.any():
        out.update(aupr_err=float("nan"), auroc=float("nan"), fpr95=float("nan"))
        return out
    s = LabeledScores(c.confidence[c.correct], c.confidence[~c.correct])
    out.update(aupr_err=aupr_err(c), auroc=auroc(s), fpr95=fpr_at_tpr(s))
    return out
