"""Time the numba and numpy variants of each kernel on representative inputs.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both variants are called directly, so the AOP_LAB_DISABLE_JIT flag does not
matter here. The first numba call (compilation or cache load) is excluded.
"""
import argparse
import timeit

import numpy as np

from aop_lab import kernels


def cases(rng):
    pos, neg = rng.standard_normal(2000).round(2), rng.standard_normal(3000).round(2)
    scores = np.r_[pos, neg]
    order = np.argsort(-scores, kind="stable")
    is_pos = np.r_[np.ones(pos.size, bool), np.zeros(neg.size, bool)][order]
    n = 1_000_000
    signs = np.where(rng.integers(0, 2, n) == 1, 1.0, -1.0)
    special = signs + rng.standard_normal(n)
    common = signs * 100.0 + 100.0 * rng.standard_normal(n)
    bank, queries = rng.standard_normal((1000, 64)), rng.standard_normal((500, 64))
    return {
        "pair_counts 2000x3000": (kernels.pair_counts_numba, kernels.pair_counts_numpy, (pos, neg)),
        "tie_sweep n=5000": (kernels.tie_sweep_numba, kernels.tie_sweep_numpy, (scores[order], is_pos)),
        "risk_counts n=1e6": (kernels.risk_counts_numba, kernels.risk_counts_numpy,
                              (special, common, signs, 1.0, 0.01, 2.0)),
        "kth_distance 500x1000x64": (kernels.kth_distance_numba, kernels.kth_distance_numpy,
                                     (bank, queries, 50)),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    print(f"{'kernel':<26}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}  agree")
    for name, (fast, slow, inputs) in cases(np.random.default_rng(0)).items():
        a, b = fast(*inputs), slow(*inputs)
        if isinstance(a, tuple):
            agree = all(np.array_equal(x, y) for x, y in zip(a, b))
        else:
            agree = np.allclose(a, b, rtol=0, atol=1e-12)
        t_fast = min(timeit.repeat(lambda: fast(*inputs), number=1, repeat=args.repeat)) * 1e3
        t_slow = min(timeit.repeat(lambda: slow(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<26}{t_fast:>10.2f}{t_slow:>10.2f}{t_slow / t_fast:>8.1f}x  {agree}")


if __name__ == "__main__":
    main()
