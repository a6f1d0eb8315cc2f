"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``. Criteria 8 and 9 share
one module-scoped set of five IMP + averaging runs (about ten minutes on one core).
"""
import json
import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from aop_lab import metrics
from aop_lab import experiment as ex
from aop_lab.averaging import ModelAverager
from aop_lab.checkpoint import load_checkpoint, save_checkpoint
from aop_lab.datagen import BlobTaskSpec, LabeledDataset, make_blob_task
from aop_lab.netcore import MlpSpec, SgdConfig, forward, gradient_check, init_params
from aop_lab.pruning import ImpConfig, imp_run
from aop_lab.scoring import (SCORERS, ScorerConfig, compute_scores, fit_feature_bank, score_energy, score_msp,
                             score_odin, score_react_energy)
from aop_lab.theory import (TheoryParams, bayes_classifier, closed_form_risks, lasso_classifier,
                            monte_carlo_risks)
from aop_lab.training import TaskData, train_span

import oracles

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk_aop.json"


@pytest.fixture
def verdict(capsys):
    def report(number, title, ok, detail=""):
        line = f"[acceptance {number:>2}] {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  ({detail})"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return report


# ---------------------------------------------------------------------------
# 1-3: Gaussian special/common feature model


def test_01_closed_form_vs_monte_carlo(verdict):
    start = time.perf_counter()
    worst, failures = 0.0, []
    for i, d in enumerate((0, 1_000, 10_000, 100_000)):
        for j, delta in enumerate((1.0, 2.0, 3.0)):
            for k, lam in enumerate((0.0, 0.01, 0.5)):
                p = TheoryParams(d, 0.01, sigma=1.0, delta=delta, lam=lam)
                f = lasso_classifier(p)
                exact = closed_form_risks(f, p)
                mc = monte_carlo_risks(f, p, 10**6, seed=100 * i + 10 * j + k)
                for est, cf in ((mc.risks.r_id, exact.r_id), (mc.risks.r_ood, exact.r_ood)):
                    se = max(math.sqrt(est * (1 - est) / mc.n), math.sqrt(cf * (1 - cf) / mc.n))
                    z = abs(est - cf) / se if se > 0 else (0.0 if est == cf else math.inf)
                    worst = max(worst, z)
                    if z > 4:
                        failures.append((d, delta, lam, est, cf))
    elapsed = time.perf_counter() - start
    verdict(1, "closed form vs Monte Carlo within 4 SE, <= 60 s", not failures and elapsed <= 60,
            f"36 cells, max |diff|/SE {worst:.2f}, {elapsed:.1f} s, failures {failures}")


def test_02_lasso_exactness(verdict):
    rng = np.random.default_rng(2024)
    bad = 0
    for _ in range(1000):
        eta, lam = rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.5)
        f = lasso_classifier(TheoryParams(10, eta, lam=lam))
        bad += f.w1 != max(1.0 - lam, 0.0) or f.wc != max(eta - lam, 0.0)
        if lam >= eta:
            bad += f.wc != 0.0
    for eta in (0.0, 0.01, 0.3, 0.99):
        p = TheoryParams(7, eta, lam=0.0)
        bad += lasso_classifier(p) != bayes_classifier(p)
    verdict(2, "lasso weights are ((1-lam)+, (eta-lam)+) exactly", bad == 0, f"{bad} mismatches")


def test_03_fig4_sweeps_from_csv(tmp_path, verdict):
    ex.run_theory(ex.ExperimentConfig(), tmp_path)
    problems = []
    rows_a = np.genfromtxt(tmp_path / "fig4a.csv", delimiter=",", names=True)
    for delta in np.unique(rows_a["delta"]):
        sel = np.sort(rows_a[rows_a["delta"] == delta], order="d")
        if not np.all(np.diff(sel["r_id"]) < 0):
            problems.append(f"r_id not decreasing in d at delta={delta}")
        if not np.all(np.diff(sel["r_ood"]) >= 0):
            problems.append(f"r_ood decreasing in d at delta={delta}")
    rows_b = np.genfromtxt(tmp_path / "fig4b.csv", delimiter=",", names=True)
    rows_b = np.sort(rows_b, order="lambda")
    if not np.all(np.diff(rows_b["r_ood"]) <= 0):
        problems.append("r_ood increasing in lambda")
    if not np.all(np.diff(rows_b["r_id"]) >= 0):
        problems.append("r_id decreasing in lambda")
    verdict(3, "fig4a/fig4b CSVs monotone in d and lambda", not problems,
            f"{len(rows_a)} d-rows, {len(rows_b)} lambda-rows at d=50000; {problems}")


# ---------------------------------------------------------------------------
# 4-7: metrics, gradients, averaging, pruning


def _tied_instance(rng, n_max):
    n_pos = int(rng.integers(1, n_max))
    n_neg = int(rng.integers(1, n_max - n_pos + 1))
    levels = int(rng.integers(1, 5))
    return rng.integers(0, levels, n_pos).astype(float), rng.integers(0, levels, n_neg).astype(float)


def test_04_metric_oracles(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_auroc = 0.0
    for _ in range(200):
        pos, neg = _tied_instance(rng, 60)
        worst_auroc = max(worst_auroc, abs(metrics.auroc(pos, neg) - metrics.auroc_mann_whitney(pos, neg)))
        worst_auroc = max(worst_auroc, abs(metrics.auroc(pos, neg) - float(oracles.pairwise_auroc(pos, neg))))
    mismatches, checked = [], 0
    for _ in range(300):
        pos, neg = _tied_instance(rng, 12)
        p, q = pos.tolist(), neg.tolist()
        if metrics.fpr_at_tpr(pos, neg) != float(oracles.fpr_at_tpr(p, q)):
            mismatches.append(("fpr95", p, q))
        if abs(metrics.aupr(pos, neg) - float(oracles.average_precision(p, q))) > 1e-15:
            mismatches.append(("aupr", p, q))
        n = int(rng.integers(1, 13))
        conf = rng.integers(0, 4, n).astype(float).tolist()
        correct = (rng.random(n) < 0.6).tolist()
        ref_aurc = oracles.aurc(conf, correct)
        best = oracles.best_aurc_by_permutation(correct) if n <= 8 else oracles.best_aurc(correct)
        if abs(metrics.aurc(conf, correct) - float(ref_aurc)) > 1e-15:
            mismatches.append(("aurc", conf, correct))
        if abs(metrics.e_aurc(conf, correct) - float(ref_aurc - best)) > 1e-15:
            mismatches.append(("e_aurc", conf, correct))
        if 0 < sum(correct) < n:
            if abs(metrics.aupr_err(conf, correct) - float(oracles.aupr_err(conf, correct))) > 1e-15:
                mismatches.append(("aupr_err", conf, correct))
        checked += 1
    elapsed = time.perf_counter() - start
    ok = worst_auroc <= 1e-12 and not mismatches and elapsed <= 10
    verdict(4, "metrics match enumeration oracles, <= 10 s", ok,
            f"AUROC max gap {worst_auroc:.1e} on 200 tied instances, {checked} n<=12 instances, "
            f"{len(mismatches)} mismatches, {elapsed:.2f} s")


def test_05_gradient_soundness(verdict):
    rng = np.random.default_rng(5)
    errs = []
    for i in range(20):
        depth = int(rng.integers(0, 3))
        spec = MlpSpec(int(rng.integers(1, 5)), tuple(int(w) for w in rng.integers(1, 6, depth)),
                       int(rng.integers(2, 5)))
        p = init_params(spec, i)
        for b in p.biases:
            b[:] = 0.1 * rng.standard_normal(b.shape)
        x = rng.standard_normal((5, spec.input_dim))
        y = rng.integers(0, spec.num_classes, 5)
        errs.append(gradient_check(spec, p, x, y))
    verdict(5, "analytic gradients within 1e-6 of central differences", max(errs) <= 1e-6,
            f"20 nets, max relative error {max(errs):.2e}")


def test_06_running_mean_equals_arithmetic_mean(verdict):
    rng = np.random.default_rng(6)
    x = rng.standard_normal((64, 1))
    data = TaskData(LabeledDataset(x, (x[:, 0] > 0).astype(np.int64), "id_train"),
                    LabeledDataset(x[:8], (x[:8, 0] > 0).astype(np.int64), "id_test"))
    spec = MlpSpec(1, (), 2)
    t0 = 20
    p = init_params(spec, 0)
    averager = ModelAverager(p, t0)
    post = []
    train_span(spec, p, data, SgdConfig(0.05, 0.9, 1e-3), 0, 50, seed=0, batch_size=16, averager=averager,
               on_epoch=lambda e, q, a: post.append(q.flat()) if e > t0 else None)
    gap = float(np.max(np.abs(averager.snapshot().flat() - np.mean(post, axis=0))))
    verdict(6, "averaged checkpoint equals mean of post-t0 checkpoints to 1e-12", gap <= 1e-12,
            f"{len(post)} checkpoints, max gap {gap:.1e}")


def test_07_imp_rewinding_exact(verdict):
    spec = MlpSpec(3, (390_625,), 2)  # 3*390625 + 390625*2 = 5**9 prunable weights
    rng = np.random.default_rng(7)
    x = rng.standard_normal((16, 3))
    data = TaskData(LabeledDataset(x, (x[:, 0] > 0).astype(np.int64), "id_train"),
                    LabeledDataset(x[:4], (x[:4, 0] > 0).astype(np.int64), "id_test"))
    sgd = SgdConfig(0.01, 0.9, 5e-4)
    cfg = ImpConfig(rewind_epoch=1, train_epochs=2, rounds=9, prune_fraction=0.2)
    rounds = imp_run(spec, 3, sgd, cfg, data, batch_size=8)
    # independent theta_k: replay the dense run up to the rewind epoch
    theta_k, _ = train_span(spec, init_params(spec, 3), data, sgd, 0, 1, seed=3 * 1000, batch_size=8)
    kept, bad = Fraction(5**9), []
    for res in rounds[1:]:
        kept -= math.floor(kept * Fraction(1, 5))
        if res.mask.kept_count != kept:
            bad.append(f"round {res.round} kept {res.mask.kept_count} != {kept}")
        for w, ref, keep in zip(res.start_params.weights, theta_k.weights, res.mask.keep):
            if not (np.array_equal(w[keep], ref[keep]) and np.all(w[~keep] == 0)):
                bad.append(f"round {res.round} start weights differ from theta_k")
        if not all(np.array_equal(b, r) for b, r in zip(res.start_params.biases, theta_k.biases)):
            bad.append(f"round {res.round} biases differ from theta_k")
    final = Fraction(rounds[-1].mask.kept_count, rounds[-1].mask.size)
    ok = not bad and final == Fraction(4, 5) ** 9 and float(final) == 0.134217728
    verdict(7, "IMP rewinds to theta_k bitwise; 9 rounds at 0.2 leave 0.8^9", ok,
            f"final {rounds[-1].mask.kept_count}/{rounds[-1].mask.size} = {float(final)}; {bad[:3]}")


# ---------------------------------------------------------------------------
# 8-9: desk-scale AoP effect and landscape stability


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    base = json.loads(DESK_CONFIG.read_text())
    root = tmp_path_factory.mktemp("desk")
    start = time.perf_counter()
    runs = []
    for seed in range(5):
        cfg = ex.ExperimentConfig.from_dict({**base, "seed": seed})
        res = ex.run_aop(cfg, root / f"seed{seed}")
        runs.append((cfg, res))
    return runs, time.perf_counter() - start


def _auroc(rows, column):
    return np.array([r[column] for r in rows])


@pytest.mark.slow
def test_08_desk_scale_aop_effect(desk_runs, verdict):
    runs, elapsed = desk_runs
    overfit, dense_final, aop_final, steadier, lines = 0, [], [], 0, []
    for cfg, res in runs:
        dense_rows = [r for r in res.log.rows if r["round"] == 0]
        online = _auroc(dense_rows, "online_msp_ood_auroc")
        averaged = _auroc(dense_rows, "ma_msp_ood_auroc")
        last = [r for r in res.log.rows if r["round"] == cfg.imp.rounds]
        tail = max(1, len(online) // 10)
        overfit += online.max() > online[-1]
        steadier += averaged[-tail:].std() < online[-tail:].std()
        dense_final.append(online[-1])
        aop_final.append(last[-1]["ma_msp_ood_auroc"])
        lines.append(f"seed {cfg.seed}: dense max {online.max():.4f} final {online[-1]:.4f}, "
                     f"AoP final {aop_final[-1]:.4f}, tail std online {online[-tail:].std():.5f} "
                     f"MA {averaged[-tail:].std():.5f}")
    ok_a, ok_b = overfit >= 4, np.median(aop_final) >= np.median(dense_final)
    ok_c, ok_t = steadier >= 4, elapsed <= 15 * 60
    detail = (f"(a) overfitting {overfit}/5, (b) median AoP {np.median(aop_final):.4f} vs dense "
              f"{np.median(dense_final):.4f}, (c) MA steadier {steadier}/5, {elapsed:.0f} s\n  " + "\n  ".join(lines))
    verdict(8, "desk-scale AoP effect over 5 seeds, <= 15 min", ok_a and ok_b and ok_c and ok_t, detail)


@pytest.mark.slow
def test_09_landscape_stability(desk_runs, tmp_path, verdict):
    runs, _ = desk_runs
    cfg, res = runs[0]
    start = time.perf_counter()
    ranges = ex.run_landscape(cfg, res.out_dir)
    elapsed = time.perf_counter() - start
    med_online, med_ma = float(np.median(ranges["online"])), float(np.median(ranges["ma"]))
    verdict(9, "median AUROC range over 10 directions smaller for MA, <= 5 min",
            med_ma < med_online and elapsed <= 300,
            f"online {med_online:.5f}, MA {med_ma:.5f}, {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# 10-11: scorer contracts, determinism and persistence


def test_10_scorer_contracts(verdict):
    bs = BlobTaskSpec(4, 4, 20, class_separation=4.0, seed=0)
    tr, te, _ = make_blob_task(bs, 600, 300, 300)
    spec = MlpSpec(24, (32,), 4)
    p = init_params(spec, 0)
    train_span(spec, p, TaskData(tr, te), SgdConfig(0.05, 0.9, 1e-4), 0, 15, seed=0, batch_size=32)
    odin_gap = float(np.max(np.abs(score_odin(spec, p, te.inputs, temperature=1.0, epsilon=0.0)
                                   - score_msp(forward(spec, p, te.inputs)))))
    bank = fit_feature_bank(spec, p, tr, ScorerConfig(react_percentile=100.0))
    react_gap = float(np.max(np.abs(score_react_energy(spec, p, bank, tr.inputs)
                                    - score_energy(forward(spec, p, tr.inputs)))))

    sep = BlobTaskSpec(4, 4, 0, class_separation=10.0, noise_sigma=0.5, ood_shift=0.0, seed=2)
    tr, te, ood = make_blob_task(sep, 400, 200, 200)
    spec = MlpSpec(4, (16,), 4)
    p = init_params(spec, 1)
    train_span(spec, p, TaskData(tr, te), SgdConfig(0.05, 0.9, 0.0), 0, 30, seed=0, batch_size=32)
    scfg = ScorerConfig(knn_k=5)
    sbank = fit_feature_bank(spec, p, tr, scfg)
    aurocs = {name: metrics.auroc(compute_scores(name, spec, p, te.inputs, scfg, sbank),
                                  compute_scores(name, spec, p, ood.inputs, scfg, sbank)) for name in SCORERS}
    ok = odin_gap <= 1e-12 and react_gap <= 1e-9 and min(aurocs.values()) >= 0.99
    verdict(10, "ODIN(T=1, eps=0) = MSP, ReAct(100th pct) = Energy, all scorers >= 0.99 AUROC", ok,
            f"ODIN gap {odin_gap:.1e}, ReAct gap {react_gap:.1e}, "
            + ", ".join(f"{k} {v:.4f}" for k, v in aurocs.items()))


def test_11_determinism_and_persistence(tmp_path, verdict):
    raw = {"seed": 3, "epochs": 6, "batch_size": 16, "scorers": ["msp", "energy"],
           "net": {"hidden_widths": [16]}, "averaging": {"t0": 3}, "imp": {"rounds": 2, "rewind_epoch": 1},
           "data": {"blob": {"common_dims": 10}, "n_train": 120, "n_test": 60, "n_ood": 60}}
    cfg = ex.ExperimentConfig.from_dict(raw)
    res = ex.run_aop(cfg, tmp_path / "a" / "run")
    ex.run_aop(ex.ExperimentConfig.from_dict(raw), tmp_path / "b" / "run")
    same_log = (tmp_path / "a/run/runlog.csv").read_bytes() == (tmp_path / "b/run/runlog.csv").read_bytes()

    mask = res.rounds[-1].mask
    save_checkpoint(tmp_path / "c.aopckpt", res.spec, res.final_online, 3, cfg.epochs, mask, res.final_averaged)
    ck = load_checkpoint(tmp_path / "c.aopckpt")
    same_ck = (ck.spec == res.spec and ck.params.equal(res.final_online) and ck.ema.equal(res.final_averaged)
               and all(np.array_equal(a, b) for a, b in zip(ck.mask.keep, mask.keep)))
    save_checkpoint(tmp_path / "d.aopckpt", ck.spec, ck.params, ck.seed, ck.epoch, ck.mask, ck.ema)
    same_bytes = (tmp_path / "c.aopckpt").read_bytes() == (tmp_path / "d.aopckpt").read_bytes()
    verdict(11, "byte-identical RunLog CSV; checkpoint round-trip with mask and averaged weights",
            same_log and same_ck and same_bytes,
            f"runlog identical {same_log}, checkpoint fields {same_ck}, re-save bytes {same_bytes}, "
            f"sparsity {mask.sparsity:.3f}")
