"""Command-line entry point: ``aop-lab <command> --config FILE [--out DIR] [--seed N]``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiment as ex

COMMANDS = {
    "train": "dense training with model averaging, per-epoch scoring and report",
    "imp": "iterative magnitude pruning with rewinding plus model averaging (the full pipeline)",
    "eval": "score the stored checkpoint; one sample_id,provenance,score CSV per scorer",
    "theory": "closed-form risk sweeps over d and lambda (fig4a.csv, fig4b.csv)",
    "landscape": "AUROC/FPR95/accuracy along random weight directions (landscape.csv)",
    "width-sweep": "one run per hidden width and seed (width_sweep.csv)",
    "report": "rebuild metrics.csv, curves.csv and plots from a stored runlog.csv",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aop-lab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in COMMANDS.items():
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name == "imp":
            p.add_argument("--resume", action="store_true", help="continue after the last completed round")
    return parser


def _write_feature_diff(res: ex.RunResult) -> None:
    ood = next(iter(res.task.ood.values()))
    final = res.final_averaged if res.final_averaged is not None else res.final_online
    dense, sparse = ex.feature_diff_report(res.spec, res.dense_online, final, res.task.test.inputs, ood.inputs)
    ex.write_feature_diff(res.out_dir / "feature_diff.csv", dense, sparse)
    logging.info("feature diff L1: dense %.4f, sparse %.4f", float(np.abs(dense).sum()),
                 float(np.abs(sparse).sum()))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ex.load_config(args.config)
    except ex.ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    try:
        if args.command == "train":
            res = ex.run_aop(cfg, out, dense=True)
            print(f"wrote {len(res.log.rows)} eval rows to {out / 'runlog.csv'}")
        elif args.command == "imp":
            if cfg.imp is None:
                print("config has no imp section", file=sys.stderr)
                return 2
            res = ex.run_aop(cfg, out, resume=args.resume)
            _write_feature_diff(res)
            print(f"wrote {len(res.rounds)} rounds, {len(res.log.rows)} eval rows to {out}")
        elif args.command == "eval":
            summary = ex.run_eval(cfg, out)
            for scorer, vals in summary.items():
                print(f"{scorer}: auroc={vals['auroc']:.4f} fpr95={vals['fpr95']:.4f} acc={vals['acc']:.4f}")
        elif args.command == "theory":
            rows_a, rows_b = ex.run_theory(cfg, out)
            print(f"wrote {len(rows_a)} rows to fig4a.csv and {len(rows_b)} rows to fig4b.csv in {out}")
        elif args.command == "landscape":
            ranges = ex.run_landscape(cfg, out)
            for label, vals in ranges.items():
                print(f"{label}: median AUROC range {float(np.median(vals)):.5f}")
        elif args.command == "width-sweep":
            rows = ex.width_sweep(cfg, out_dir=out)
            print(f"wrote {len(rows)} runs to {out / 'width_sweep.csv'}")
        elif args.command == "report":
            runlog = ex.RunLog.load(out)
            for path in ex.emit_report([runlog], out):
                print(path)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
