"""Post-hoc OOD scores. Every scorer returns one value per sample with
higher meaning more in-distribution.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .datagen import LabeledDataset
from .netcore import (ForwardTrace, MlpSpec, ParamSet, backprop, forward, head_logits,
                      log_softmax, softmax)

log = logging.getLogger(__name__)

SCORERS = ("msp", "maxlogit", "energy", "odin", "maha", "knn", "react")
BANK_SCORERS = ("maha", "knn", "react")


@dataclass
class ScorerConfig:
    odin_temperature: float = 1000.0
    odin_epsilon: float = 0.005
    energy_temperature: float = 1.0
    knn_k: int = 50
    react_percentile: float = 90.0
    maha_epsilon: float = 0.0
    input_scale: float = 1.0  # perturbation sizes are multiples of this input std

    def __post_init__(self):
        if self.odin_temperature <= 0 or self.energy_temperature <= 0:
            raise ValueError("temperatures must be positive")
        if not 0.0 < self.react_percentile <= 100.0:
            raise ValueError("react_percentile must lie in (0, 100]")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.odin_epsilon < 0 or self.maha_epsilon < 0:
            raise ValueError("perturbation magnitudes must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "ScorerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scorer options: {sorted(unknown)}")
        return cls(**d)


def _logits(x) -> np.ndarray:
    return x.logits if isinstance(x, ForwardTrace) else np.asarray(x, dtype=np.float64)


def score_msp(trace) -> np.ndarray:
    return softmax(_logits(trace)).max(axis=1)


def score_maxlogit(trace) -> np.ndarray:
    return _logits(trace).max(axis=1)


def score_energy(trace, temperature: float = 1.0) -> np.ndarray:
    """Negative free energy ``T * logsumexp(logits / T)``."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return temperature * logsumexp(_logits(trace) / temperature, axis=1)


def odin_perturb(spec: MlpSpec, params: ParamSet, batch, temperature: float, epsilon: float) -> np.ndarray:
    """Move inputs by ``epsilon`` against the sign of the gradient of the
    temperature-scaled NLL of the predicted class."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    trace = forward(spec, params, batch)
    if epsilon == 0:
        return trace.activations[0]
    pred = trace.logits.argmax(axis=1)
    dlogits = softmax(trace.logits / temperature)
    dlogits[np.arange(len(pred)), pred] -= 1.0
    dlogits /= temperature
    _, gx = backprop(spec, params, trace, dlogits)
    return trace.activations[0] - epsilon * np.sign(gx)


def score_odin(spec: MlpSpec, params: ParamSet, batch, cfg: Optional[ScorerConfig] = None,
               temperature: Optional[float] = None, epsilon: Optional[float] = None) -> np.ndarray:
    cfg = cfg or ScorerConfig()
    t = cfg.odin_temperature if temperature is None else temperature
    eps = cfg.odin_epsilon * cfg.input_scale if epsilon is None else epsilon
    x = odin_perturb(spec, params, batch, t, eps)
    return softmax(forward(spec, params, x).logits / t).max(axis=1)


@dataclass
class FeatureBank:
    class_means: np.ndarray  # (C, F)
    covariance: np.ndarray  # (F, F), regularised
    precision: np.ndarray
    knn_bank: np.ndarray  # l2-normalised training features
    react_threshold: np.ndarray  # (F,)


def _normalize_rows(f: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    return f / np.maximum(norms, 1e-12)


def fit_feature_bank_from_features(features: np.ndarray, labels: np.ndarray, num_classes: int,
                                   react_percentile: float = 90.0, reg: float = 1e-6,
                                   max_condition: float = 1e14) -> FeatureBank:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=num_classes)
    if counts.min() < 2:
        raise ValueError(f"need >= 2 samples per class, got counts {counts.tolist()}")
    means = np.stack([features[labels == c].mean(axis=0) for c in range(num_classes)])
    centered = features - means[labels]
    cov = centered.T @ centered / len(features)
    cov = 0.5 * (cov + cov.T) + reg * np.eye(cov.shape[0])
    cond = np.linalg.cond(cov)
    if not np.isfinite(cond) or cond > max_condition:
        raise np.linalg.LinAlgError(f"covariance is singular after regularisation (condition number {cond:.3e})")
    precision = np.linalg.inv(cov)
    precision = 0.5 * (precision + precision.T)
    threshold = np.percentile(features, react_percentile, axis=0)
    return FeatureBank(means, cov, precision, _normalize_rows(features), threshold)


def fit_feature_bank(spec: MlpSpec, params: ParamSet, train: LabeledDataset,
                     cfg: Optional[ScorerConfig] = None) -> FeatureBank:
    cfg = cfg or ScorerConfig()
    feats = forward(spec, params, train.inputs).features
    return fit_feature_bank_from_features(feats, train.labels, spec.num_classes, cfg.react_percentile)


def mahalanobis_distances(bank: FeatureBank, features: np.ndarray) -> np.ndarray:
    """Squared distances ``(N, C)`` to every class mean under the shared precision."""
    diff = features[:, None, :] - bank.class_means[None, :, :]
    return np.einsum("ncf,fg,ncg->nc", diff, bank.precision, diff)


def score_mahalanobis(bank: FeatureBank, features) -> np.ndarray:
    features = features.features if isinstance(features, ForwardTrace) else np.asarray(features, dtype=np.float64)
    return -mahalanobis_distances(bank, features).min(axis=1)


def maha_perturb(spec: MlpSpec, params: ParamSet, bank: FeatureBank, batch, epsilon: float) -> np.ndarray:
    """Input step of size ``epsilon`` that lowers the closest-class distance."""
    trace = forward(spec, params, batch)
    if epsilon == 0:
        return trace.activations[0]
    f = trace.features
    c = mahalanobis_distances(bank, f).argmin(axis=1)
    dfeat = 2.0 * (f - bank.class_means[c]) @ bank.precision
    _, gx = backprop(spec, params, trace, np.zeros_like(trace.logits), dfeatures=dfeat)
    return trace.activations[0] - epsilon * np.sign(gx)


def score_mahalanobis_input(spec: MlpSpec, params: ParamSet, bank: FeatureBank, batch,
                            cfg: Optional[ScorerConfig] = None) -> np.ndarray:
    cfg = cfg or ScorerConfig()
    x = maha_perturb(spec, params, bank, batch, cfg.maha_epsilon * cfg.input_scale)
    return score_mahalanobis(bank, forward(spec, params, x).features)


def score_knn(bank: FeatureBank, features, k: int = 50) -> np.ndarray:
    """Negative distance from the normalised feature to its k-th nearest normalised bank feature."""
    features = features.features if isinstance(features, ForwardTrace) else np.asarray(features, dtype=np.float64)
    m = bank.knn_bank.shape[0]
    if k > m:
        log.warning("knn k=%d exceeds bank size %d; clamping", k, m)
        k = m
    return -kernels.kth_distance(bank.knn_bank, _normalize_rows(features), k)


def score_react_energy(spec: MlpSpec, params: ParamSet, bank: Optional[FeatureBank], batch,
                       cfg: Optional[ScorerConfig] = None, threshold=None) -> np.ndarray:
    """Energy after clipping penultimate activations at the bank's per-coordinate threshold."""
    cfg = cfg or ScorerConfig()
    thr = bank.react_threshold if threshold is None else threshold
    feats = forward(spec, params, batch).features
    clipped = np.minimum(feats, thr)
    return score_energy(head_logits(params, clipped), cfg.energy_temperature)


def oe_loss(trace, labels, ood_trace, weight: float) -> float:
    """Cross-entropy on ID plus ``weight`` times cross-entropy of outlier
    predictions against the uniform distribution.

    The outlier term equals ``KL(uniform || p) + log(C)``, so it is ``log(C)``
    (not 0) for uniform outlier logits and grows as predictions sharpen.
    """
    if weight < 0:
        raise ValueError("weight must be >= 0")
    logits = _logits(trace)
    labels = np.asarray(labels, dtype=np.int64)
    ce = float(-log_softmax(logits)[np.arange(len(labels)), labels].mean())
    if weight == 0:
        return ce
    uniform_ce = float(-log_softmax(_logits(ood_trace)).mean(axis=1).mean())
    return ce + weight * uniform_ce


def compute_scores(name: str, spec: MlpSpec, params: ParamSet, batch, cfg: Optional[ScorerConfig] = None,
                   bank: Optional[FeatureBank] = None, trace: Optional[ForwardTrace] = None) -> np.ndarray:
    """Dispatch by scorer name; ``bank`` is required for maha/knn/react."""
    cfg = cfg or ScorerConfig()
    if name not in SCORERS:
        raise ValueError(f"unknown scorer {name!r}; choose from {SCORERS}")
    if name in BANK_SCORERS and bank is None:
        raise ValueError(f"scorer {name!r} needs a fitted feature bank")
    if name == "odin":
        return score_odin(spec, params, batch, cfg)
    if name == "react":
        return score_react_energy(spec, params, bank, batch, cfg)
    if name == "maha" and cfg.maha_epsilon > 0:
        return score_mahalanobis_input(spec, params, bank, batch, cfg)
    trace = trace if trace is not None else forward(spec, params, batch)
    if name == "msp":
        return score_msp(trace)
    if name == "maxlogit":
        return score_maxlogit(trace)
    if name == "energy":
        return score_energy(trace, cfg.energy_temperature)
    if name == "maha":
        return score_mahalanobis(bank, trace.features)
    return score_knn(bank, trace.features, cfg.knn_k)
