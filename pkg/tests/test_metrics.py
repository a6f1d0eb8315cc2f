import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aop_lab import kernels, metrics
from aop_lab.metrics import ConfidenceOutcomes, EmptyScoresError, LabeledScores

import oracles


def test_auroc_examples():
    assert metrics.auroc([0.9, 0.8], [0.1, 0.2]) == 1.0
    assert metrics.auroc([0.9, 0.4], [0.5, 0.1]) == 0.75
    assert metrics.auroc([0.3] * 4, [0.3] * 5) == 0.5
    with pytest.raises(EmptyScoresError):
        metrics.auroc([], [1.0])


def test_roc_curve_endpoints_and_monotone():
    rng = np.random.default_rng(0)
    c = metrics.roc_curve(rng.integers(0, 5, 20).astype(float), rng.integers(0, 5, 15).astype(float))
    assert (c.tpr[0], c.fpr[0]) == (0.0, 0.0)
    assert (c.tpr[-1], c.fpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(c.tpr) >= 0) and np.all(np.diff(c.fpr) >= 0)


def test_aupr_examples():
    assert metrics.aupr([0.9, 0.8], [0.1, 0.2]) == 1.0
    assert metrics.aupr([0.5] * 3, [0.5] * 3) == 0.5
    pos, neg = [0.9, 0.4], [0.5, 0.1]
    # thresholds 0.9: R=1/2 P=1; 0.5: R=1/2; 0.4: R=1 P=2/3 -> 1/2 + 1/2*2/3
    assert metrics.aupr(pos, neg) == pytest.approx(float(oracles.average_precision(pos, neg)), abs=1e-15)
    assert metrics.aupr(pos, neg) == pytest.approx(0.5 + 1 / 3, abs=1e-15)


def test_fpr95_examples():
    assert metrics.fpr_at_tpr([0.9, 0.8], [0.1, 0.2]) == 0.0
    ids = np.arange(100, dtype=float)
    assert metrics.fpr_at_tpr(ids, ids.copy()) == 0.95
    assert metrics.fpr_at_tpr(np.repeat(ids, 2), np.repeat(ids, 2)) == 0.95


def test_fpr95_threshold_at_95th_from_top():
    rng = np.random.default_rng(3)
    ids = rng.permutation(100).astype(float) + 0.5
    ood = rng.uniform(0, 100, 57)
    thr = np.sort(ids)[::-1][94]
    assert metrics.fpr_at_tpr(ids, ood) == np.mean(ood >= thr)


def test_aurc_examples():
    assert metrics.aurc([0.9, 0.8, 0.7], [True, True, True]) == 0.0
    assert metrics.aurc([0.9, 0.1], [True, False]) == 0.25
    assert metrics.aurc([0.9, 0.1], [False, False]) == 1.0
    assert metrics.e_aurc([0.9, 0.1], [True, False]) == 0.0
    assert metrics.e_aurc([0.1, 0.9], [True, False]) > 0


def test_aupr_err_examples():
    with pytest.raises(EmptyScoresError, match="no positives"):
        metrics.aupr_err([0.3, 0.2], [True, True])
    assert metrics.aupr_err([0.9, 0.8, 0.2, 0.1], [True, True, False, False]) == 1.0


def test_aupr_err_six_point_case():
    conf = [0.95, 0.9, 0.7, 0.7, 0.4, 0.2]
    correct = [True, False, True, False, True, False]
    assert metrics.aupr_err(conf, correct) == pytest.approx(float(oracles.aupr_err(conf, correct)), abs=1e-15)


def test_e_aurc_matches_permutation_minimum():
    rng = np.random.default_rng(7)
    for _ in range(25):
        n = int(rng.integers(1, 7))
        conf = rng.integers(0, 4, n).astype(float)
        correct = rng.random(n) < 0.6
        assert metrics.optimal_aurc(conf, correct) == pytest.approx(
            float(oracles.best_aurc_by_permutation(list(correct))), abs=1e-15)
        assert metrics.e_aurc(conf, correct) >= -1e-15


def _random_instance(rng, max_n=12):
    n1, n2 = int(rng.integers(1, max_n + 1)), int(rng.integers(1, max_n + 1))
    levels = int(rng.integers(2, 8))
    return rng.integers(0, levels, n1).astype(float), rng.integers(0, levels, n2).astype(float)


def test_detection_metrics_match_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(200):
        pos, neg = _random_instance(rng)
        s = LabeledScores(pos, neg)
        p, q = pos.tolist(), neg.tolist()
        assert metrics.auroc(s) == pytest.approx(float(oracles.pairwise_auroc(p, q)), abs=1e-15)
        assert metrics.aupr(s) == pytest.approx(float(oracles.average_precision(p, q)), abs=1e-15)
        assert metrics.fpr_at_tpr(s) == float(oracles.fpr_at_tpr(p, q))


def test_selective_metrics_match_enumeration():
    rng = np.random.default_rng(12)
    for _ in range(200):
        n = int(rng.integers(1, 13))
        conf = rng.integers(0, 5, n).astype(float).tolist()
        correct = (rng.random(n) < 0.7).tolist()
        c = ConfidenceOutcomes(conf, correct)
        assert metrics.aurc(c) == pytest.approx(float(oracles.aurc(conf, correct)), abs=1e-15)
        assert metrics.e_aurc(c) == pytest.approx(
            float(oracles.aurc(conf, correct) - oracles.best_aurc(correct)), abs=1e-15)
        if not all(correct):
            assert metrics.aupr_err(c) == pytest.approx(float(oracles.aupr_err(conf, correct)), abs=1e-15)


def test_trapezoid_equals_mann_whitney():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n1, n2 = rng.integers(1, 51, size=2)
        pos = np.round(rng.standard_normal(n1), 1)
        neg = np.round(rng.standard_normal(n2) - 0.5, 1)
        assert abs(metrics.auroc(pos, neg) - metrics.auroc_mann_whitney(pos, neg)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_rank_invariance(seed):
    rng = np.random.default_rng(seed)
    pos, neg = rng.integers(0, 6, 15) / 3.0, rng.integers(0, 6, 11) / 3.0
    conf = rng.integers(0, 6, 20) / 3.0
    correct = rng.random(20) < 0.7
    correct[0] = False
    for f in (np.exp, lambda v: 3.0 * v + 2.0):
        assert abs(metrics.auroc(f(pos), f(neg)) - metrics.auroc(pos, neg)) <= 1e-12
        assert abs(metrics.aupr(f(pos), f(neg)) - metrics.aupr(pos, neg)) <= 1e-12
        assert abs(metrics.fpr_at_tpr(f(pos), f(neg)) - metrics.fpr_at_tpr(pos, neg)) <= 1e-12
        assert abs(metrics.aurc(f(conf), correct) - metrics.aurc(conf, correct)) <= 1e-12
        assert abs(metrics.e_aurc(f(conf), correct) - metrics.e_aurc(conf, correct)) <= 1e-12
        assert abs(metrics.aupr_err(f(conf), correct) - metrics.aupr_err(conf, correct)) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_auroc_symmetry_under_negation(seed):
    rng = np.random.default_rng(seed)
    pos, neg = rng.integers(0, 5, 9).astype(float), rng.integers(0, 5, 13).astype(float)
    assert metrics.auroc(pos, neg) == pytest.approx(1 - metrics.auroc(neg, pos), abs=1e-12)
    assert metrics.auroc(pos, neg) == pytest.approx(metrics.auroc(-neg, -pos), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_aurc_bounds(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    conf, correct = rng.random(n), rng.random(n) < rng.random()
    a, e = metrics.aurc(conf, correct), metrics.e_aurc(conf, correct)
    assert metrics.optimal_aurc(conf, correct) - 1e-15 <= a <= 1.0 + 1e-15
    assert -1e-15 <= e <= a + 1e-15


def test_kernel_paths_agree():
    rng = np.random.default_rng(2)
    for _ in range(20):
        pos, neg = rng.integers(0, 9, 40).astype(float), rng.integers(0, 9, 33).astype(float)
        assert kernels.pair_counts_numba(pos, neg) == kernels.pair_counts_numpy(pos, neg)
        scores = np.concatenate([pos, neg])
        order = np.argsort(-scores, kind="stable")
        lab = np.r_[np.ones(40, bool), np.zeros(33, bool)][order]
        a = kernels.tie_sweep_numba(scores[order], lab)
        b = kernels.tie_sweep_numpy(scores[order], lab)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)
