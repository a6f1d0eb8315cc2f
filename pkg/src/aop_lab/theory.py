"""Closed-form and Monte Carlo risks for linear classifiers on the two-Gaussian
special/common feature model.

A linear classifier is summarised by ``(w1, wc)``: weight ``w1`` on the
special feature and a shared weight ``wc`` on each of the ``d`` common
features. Its logit is Gaussian under both data branches, so

* ID (label y): mean ``y * m`` with ``m = w1 + wc * d * eta``,
* OOD (sign q): mean ``q * m0`` with ``m0 = wc * d * eta``,
* both: variance ``v = sigma^2 * (w1^2 + d * wc^2)``,

giving ``r_id = Q(m / sqrt(v))`` and
``r_ood = Q((delta - m0) / sqrt(v)) + Q((delta + m0) / sqrt(v))`` with ``Q`` the
standard normal upper tail. For the Bayes classifier ``(1, eta)`` these reduce
to ``Q(sqrt(1 + d eta^2) / sigma)`` and the two-tail sum in ``d eta^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np
from scipy.special import erfc

from . import kernels
from .datagen import GaussianModelParams, sample_id, sample_ood


@dataclass(frozen=True)
class TheoryParams:
    d: int
    eta: float
    sigma: float = 1.0
    delta: float = 1.0
    lam: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.d < 0 or self.delta < 0 or self.lam < 0:
            raise ValueError("d, delta and lambda must be non-negative")


@dataclass(frozen=True)
class LinearClassifier:
    w1: float
    wc: float
    d: int

    def weights(self) -> np.ndarray:
        return np.concatenate([[self.w1], np.full(self.d, self.wc)])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.w1 * x[:, 0] + self.wc * x[:, 1:].sum(axis=1)


@dataclass(frozen=True)
class RiskPair:
    r_id: float
    r_ood: float


def upper_tail(a):
    """Standard normal survival function ``P(N(0,1) > a)`` as ``erfc(a / sqrt 2) / 2``.

    erfc keeps full relative precision deep in the upper tail, where
    ``1 - Phi(a)`` would cancel.
    """
    return 0.5 * erfc(np.asarray(a, dtype=np.float64) / math.sqrt(2.0))


def bayes_classifier(p: TheoryParams) -> LinearClassifier:
    return LinearClassifier(1.0, float(p.eta), p.d)


def lasso_classifier(p: TheoryParams) -> LinearClassifier:
    """Soft-thresholded population solution: ``((1 - lam)_+, (eta - lam)_+)``."""
    return LinearClassifier(max(1.0 - p.lam, 0.0), max(p.eta - p.lam, 0.0), p.d)


def logit_moments(f: LinearClassifier, p: TheoryParams):
    """``(id_mean, ood_mean, variance)`` of the logit for positive sign."""
    d = f.d
    m = f.w1 + f.wc * d * p.eta
    m0 = f.wc * d * p.eta
    v = p.sigma ** 2 * (f.w1 ** 2 + d * f.wc ** 2)
    return m, m0, v


def closed_form_risks(f: LinearClassifier, p: TheoryParams) -> RiskPair:
    m, m0, v = logit_moments(f, p)
    if v <= 0:
        raise ValueError("degenerate classifier: logit variance is zero")
    sd = math.sqrt(v)
    r_id = float(upper_tail(m / sd))
    r_ood = float(upper_tail((p.delta - m0) / sd) + upper_tail((p.delta + m0) / sd))
    return RiskPair(r_id, r_ood)


def bayes_risks_literal(p: TheoryParams) -> RiskPair:
    """The Bayes-classifier risks written directly in terms of ``d eta^2``."""
    a = p.d * p.eta ** 2
    s = math.sqrt(1.0 + a)
    r_id = float(upper_tail(s / p.sigma))
    r_ood = float(upper_tail((p.delta - a) / (p.sigma * s)) + upper_tail((p.delta + a) / (p.sigma * s)))
    return RiskPair(r_id, r_ood)


@dataclass(frozen=True)
class MonteCarloResult:
    risks: RiskPair
    se_id: float
    se_ood: float
    n: int


def _sufficient_draws(rng, n, d, eta, sigma, special_mean):
    # special coordinate and the exact sum of the d common coordinates
    signs = np.where(rng.integers(0, 2, size=n) == 1, 1.0, -1.0)
    special = signs * special_mean + sigma * rng.standard_normal(n)
    common_sum = signs * d * eta + sigma * math.sqrt(d) * rng.standard_normal(n) if d else np.zeros(n)
    return special, common_sum, signs


def monte_carlo_risks(f: LinearClassifier, p: TheoryParams, n: int, seed: int,
                      method: str = "auto", chunk: int = 200_000) -> MonteCarloResult:
    """Empirical risks from ``n`` ID and ``n`` OOD draws.

    ``method="full"`` samples complete ``(d + 1)``-dimensional rows through
    :mod:`aop_lab.datagen` and applies the classifier to them.
    ``method="sufficient"`` samples the special coordinate and the sum of the
    common coordinates, which is exactly ``N(sign * d * eta, d * sigma^2)``;
    the logit depends on a row only through these two numbers, so the
    empirical risk has the same distribution at a cost independent of ``d``.
    ``auto`` picks ``full`` when ``n * (d + 1) <= 2e7``.
    """
    if n < 1000:
        raise ValueError("n must be >= 1000")
    if method == "auto":
        method = "full" if n * (p.d + 1) <= 2e7 else "sufficient"
    wrong = outside = 0
    if method == "full":
        gp = GaussianModelParams(p.d, p.eta, p.sigma, seed)
        done = 0
        while done < n:
            m = min(chunk, n - done)
            ident = sample_id(gp, m, seed=(seed, done))
            ood = sample_ood(gp, m, seed=(seed, done))
            y = np.where(ident.labels == 1, 1.0, -1.0)
            fx = f(ident.inputs)
            wrong += int(np.count_nonzero(fx * y <= 0.0))
            outside += int(np.count_nonzero(np.abs(f(ood.inputs)) > p.delta))
            done += m
    elif method == "sufficient":
        rng = np.random.default_rng([seed, 77])
        done = 0
        while done < n:
            m = min(chunk, n - done)
            sp, cs, sg = _sufficient_draws(rng, m, p.d, p.eta, p.sigma, 1.0)
            wrong += kernels.risk_counts(sp, cs, sg, f.w1, f.wc, p.delta)[0]
            sp, cs, sg = _sufficient_draws(rng, m, p.d, p.eta, p.sigma, 0.0)
            outside += kernels.risk_counts(sp, cs, sg, f.w1, f.wc, p.delta)[1]
            done += m
    else:
        raise ValueError(f"unknown method {method!r}")
    r_id, r_ood = wrong / n, outside / n
    return MonteCarloResult(
        RiskPair(r_id, r_ood),
        math.sqrt(r_id * (1 - r_id) / n),
        math.sqrt(r_ood * (1 - r_ood) / n),
        n,
    )


def sweep_d(template: TheoryParams, d_values: Iterable[int], delta_values: Iterable[float]) -> list[dict]:
    """Rows ``{d, delta, r_id, r_ood}`` for the Bayes classifier."""
    rows = []
    for delta in delta_values:
        for d in d_values:
            p = replace(template, d=int(d), delta=float(delta))
            r = closed_form_risks(bayes_classifier(p), p)
            rows.append({"d": int(d), "delta": float(delta), "r_id": r.r_id, "r_ood": r.r_ood})
    return rows


def sweep_lambda(template: TheoryParams, lambda_values: Iterable[float]) -> list[dict]:
    """Rows ``{lambda, r_id, r_ood}`` for the LASSO classifier; ``lambda`` must stay below 1."""
    rows = []
    for lam in lambda_values:
        p = replace(template, lam=float(lam))
        r = closed_form_risks(lasso_classifier(p), p)
        rows.append({"lambda": float(lam), "r_id": r.r_id, "r_ood": r.r_ood})
    return rows


def best_tradeoff(rows: list[dict]) -> dict:
    """Row minimising ``r_id + r_ood``; a descriptive annotation only."""
    return min(rows, key=lambda r: r["r_id"] + r["r_ood"])


def default_d_grid(max_d: int = 100_000) -> np.ndarray:
    return np.unique(np.r_[np.arange(0, 1001, 10), np.arange(1000, max_d + 1, 500)])


def default_lambda_grid(step: float = 0.001, upper: float = 0.99) -> np.ndarray:
    """``0, step, 2*step, ...`` up to and including ``upper`` (never reaching 1)."""
    grid = np.round(np.arange(0.0, upper + step / 2, step), 6)
    return grid[grid <= upper]
