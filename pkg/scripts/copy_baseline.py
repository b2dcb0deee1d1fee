#!/usr/bin/env python3
"""Score the Copy baseline (output = input) on a test split.

With no argument the synthetic desk test set is used; otherwise pass a
TSV of source<TAB>target lines."""

import argparse

from actionpara.data import load_pairs
from actionpara.eval_harness import copy_baseline, synthetic_corpus
from actionpara.metrics import format_table


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("tsv", nargs="?", help="test pairs (default: synthetic desk test split)")
    args = ap.parse_args()
    pairs = load_pairs(args.tsv) if args.tsv else synthetic_corpus().split.test
    print(format_table({"Copy": copy_baseline(pairs)}, label="Model"))


if __name__ == "__main__":
    main()
