#!/usr/bin/env python3
"""Train on the synthetic desk corpus and score every action-input mode,
averaged over seeds. Writes <outdir>/<name>/report.json and report.txt."""

import argparse
import logging

from actionpara.eval_harness import ALL_MODES, ExperimentSpec, desk_train_config, run_mode_table, synthetic_corpus
from actionpara.metrics import format_table


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--modes", nargs="+", default=list(ALL_MODES))
    ap.add_argument("--max-epochs", type=int, default=30)
    ap.add_argument("--beams", type=int, default=8)
    ap.add_argument("--outdir", default="runs")
    ap.add_argument("--name", default="action_modes")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    spec = ExperimentSpec(
        name=args.name, train=desk_train_config(max_epochs=args.max_epochs), modes=tuple(args.modes),
        seeds=tuple(args.seeds), outdir=args.outdir, beams=args.beams,
    )
    print(format_table(run_mode_table(synthetic_corpus(), spec)))


if __name__ == "__main__":
    main()
