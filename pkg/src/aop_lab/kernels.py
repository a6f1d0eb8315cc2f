"""Loop-shaped kernels with a numba path and a numpy path.

The public names dispatch on :data:`aop_lab._accel.USE_NUMBA`; both variants
are importable directly (``*_numba`` / ``*_numpy``) for testing and
benchmarking. Counting kernels agree exactly across paths; the distance
kernel agrees to rounding.
"""
import numpy as np

from ._accel import USE_NUMBA, njit


# -- Mann-Whitney pair counts -------------------------------------------------

@njit
def _pair_counts_numba(pos, neg):
    greater = 0
    ties = 0
    for i in range(pos.shape[0]):
        p = pos[i]
        for j in range(neg.shape[0]):
            q = neg[j]
            if p > q:
                greater += 1
            elif p == q:
                ties += 1
    return greater, ties


def pair_counts_numpy(pos, neg, chunk=2048):
    greater = 0
    ties = 0
    for start in range(0, pos.shape[0], chunk):
        block = pos[start:start + chunk, None]
        greater += int(np.count_nonzero(block > neg[None, :]))
        ties += int(np.count_nonzero(block == neg[None, :]))
    return greater, ties


def pair_counts_numba(pos, neg):
    g, t = _pair_counts_numba(np.ascontiguousarray(pos, dtype=np.float64),
                              np.ascontiguousarray(neg, dtype=np.float64))
    return int(g), int(t)


def pair_counts(pos, neg):
    """``(#{pos_i > neg_j}, #{pos_i == neg_j})`` over all pairs."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if USE_NUMBA:
        return pair_counts_numba(pos, neg)
    return pair_counts_numpy(pos, neg)


# -- tie-grouped threshold sweep ----------------------------------------------

@njit
def _tie_sweep_numba(sorted_scores, sorted_pos):
    n = sorted_scores.shape[0]
    thresholds = np.empty(n)
    tp = np.empty(n, dtype=np.int64)
    fp = np.empty(n, dtype=np.int64)
    k = 0
    ctp = 0
    cfp = 0
    for i in range(n):
        if sorted_pos[i]:
            ctp += 1
        else:
            cfp += 1
        if i == n - 1 or sorted_scores[i + 1] != sorted_scores[i]:
            thresholds[k] = sorted_scores[i]
            tp[k] = ctp
            fp[k] = cfp
            k += 1
    return thresholds[:k], tp[:k], fp[:k]


def tie_sweep_numpy(sorted_scores, sorted_pos):
    tp_all = np.cumsum(sorted_pos.astype(np.int64))
    fp_all = np.cumsum((~sorted_pos).astype(np.int64))
    last = np.r_[sorted_scores[1:] != sorted_scores[:-1], True]
    return sorted_scores[last], tp_all[last], fp_all[last]


def tie_sweep_numba(sorted_scores, sorted_pos):
    return _tie_sweep_numba(np.ascontiguousarray(sorted_scores, dtype=np.float64),
                            np.ascontiguousarray(sorted_pos, dtype=np.bool_))


def tie_sweep(scores, is_pos):
    """Cumulative (TP, FP) at each distinct threshold, sweeping high to low.

    Entry ``i`` counts samples with score ``>= thresholds[i]``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    is_pos = np.asarray(is_pos, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    s, p = scores[order], is_pos[order]
    if USE_NUMBA:
        return tie_sweep_numba(s, p)
    return tie_sweep_numpy(s, p)


# -- Monte Carlo risk counting for linear logits -----------------------------

@njit
def _risk_counts_numba(special, common_sum, signs, w1, wc, delta):
    wrong = 0
    outside = 0
    for i in range(special.shape[0]):
        f = w1 * special[i] + wc * common_sum[i]
        if f * signs[i] <= 0.0:
            wrong += 1
        if abs(f) > delta:
            outside += 1
    return wrong, outside


def risk_counts_numpy(special, common_sum, signs, w1, wc, delta):
    f = w1 * special + wc * common_sum
    return int(np.count_nonzero(f * signs <= 0.0)), int(np.count_nonzero(np.abs(f) > delta))


def risk_counts_numba(special, common_sum, signs, w1, wc, delta):
    a, b = _risk_counts_numba(np.ascontiguousarray(special, dtype=np.float64),
                              np.ascontiguousarray(common_sum, dtype=np.float64),
                              np.ascontiguousarray(signs, dtype=np.float64),
                              float(w1), float(wc), float(delta))
    return int(a), int(b)


def risk_counts(special, common_sum, signs, w1, wc, delta):
    """Count sign errors (``f * sign <= 0``) and ``|f| > delta`` events for
    ``f = w1 * special + wc * common_sum``."""
    if USE_NUMBA:
        return risk_counts_numba(special, common_sum, signs, w1, wc, delta)
    return risk_counts_numpy(np.asarray(special, dtype=np.float64),
                             np.asarray(common_sum, dtype=np.float64),
                             np.asarray(signs, dtype=np.float64), w1, wc, delta)


# -- k-th nearest neighbour distance ------------------------------------------

@njit
def _kth_distance_numba(bank, queries, k):
    m = bank.shape[0]
    out = np.empty(queries.shape[0])
    dist = np.empty(m)
    for i in range(queries.shape[0]):
        for j in range(m):
            acc = 0.0
            for c in range(bank.shape[1]):
                diff = queries[i, c] - bank[j, c]
                acc += diff * diff
            dist[j] = acc
        out[i] = np.sqrt(np.sort(dist)[k - 1])
    return out


def kth_distance_numpy(bank, queries, k, chunk=32):
    out = np.empty(queries.shape[0])
    for start in range(0, queries.shape[0], chunk):
        q = queries[start:start + chunk]
        d2 = ((q[:, None, :] - bank[None, :, :]) ** 2).sum(axis=2)
        out[start:start + chunk] = np.sqrt(np.partition(d2, k - 1, axis=1)[:, k - 1])
    return out


def kth_distance_numba(bank, queries, k):
    return _kth_distance_numba(np.ascontiguousarray(bank, dtype=np.float64),
                               np.ascontiguousarray(queries, dtype=np.float64), int(k))


def kth_distance(bank, queries, k):
    """Euclidean distance from each query row to its k-th nearest bank row."""
    bank = np.asarray(bank, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if not 1 <= k <= bank.shape[0]:
        raise ValueError(f"k={k} outside [1, {bank.shape[0]}]")
    if USE_NUMBA:
        return kth_distance_numba(bank, queries, k)
    return kth_distance_numpy(bank, queries, k)
