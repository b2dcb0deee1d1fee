#!/usr/bin/env python3
"""Train one model per strategy-weight cell and score it with all-O actions.
Writes report.json and grid.csv under <outdir>/<name>."""

import argparse
import logging

from actionpara.actions import StrategyWeights
from actionpara.eval_harness import ExperimentSpec, desk_train_config, run_strategy_grid, synthetic_corpus
from actionpara.metrics import format_table

DEFAULT_CELLS = ["0.3,0,0.7", "0.2,0.1,0.7", "0.2,0,0.8"]


def cell(text: str) -> StrategyWeights:
    w = StrategyWeights(*map(float, text.split(",")))
    w.validate()
    return w


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    ap.add_argument("--cells", nargs="+", type=cell, default=[cell(c) for c in DEFAULT_CELLS],
                    help="keep,copy,inference triples")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--beams", type=int, default=8)
    ap.add_argument("--outdir", default="runs")
    ap.add_argument("--name", default="grid")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    spec = ExperimentSpec(name=args.name, train=desk_train_config(), seeds=tuple(args.seeds),
                          outdir=args.outdir, beams=args.beams)
    report = run_strategy_grid(args.cells, spec, synthetic_corpus())
    print(format_table(report.rows(), label="keep/copy/inf"))
    for key, err in report.failures.items():
        print(f"failed {key}: {err}")


if __name__ == "__main__":
    main()
