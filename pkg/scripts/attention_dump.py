#!/usr/bin/env python3
"""Dump one decoder layer's cross-attention for a single sentence as CSV
(rows are heads, columns are encoder memory slots)."""

import argparse

from actionpara.actions import parse_actions
from actionpara.eval_harness import attention_dump
from actionpara.pipeline import Paraphraser


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    ap.add_argument("checkpoint")
    ap.add_argument("text")
    ap.add_argument("--actions", default=None, help="K/P/O per content token (default: all O)")
    ap.add_argument("--layer", type=int, default=0)
    ap.add_argument("--step", type=int, default=0, help="0-based output position")
    ap.add_argument("--beams", type=int, default=8)
    ap.add_argument("--out", default="attention.csv")
    args = ap.parse_args()

    para = Paraphraser.load(args.checkpoint)
    user = parse_actions(args.actions) if args.actions else None
    acts = para.full_actions(para.source(args.text), user)
    dump = attention_dump(para, args.text, acts, args.layer, args.step, beams=args.beams, path=args.out)
    print(f"generated: {' '.join(dump.generated)}")
    print(f"wrote {args.out} ({dump.weights.shape[0]} heads x {dump.weights.shape[1]} slots)")


if __name__ == "__main__":
    main()
