#!/usr/bin/env python3
"""Emit the spike-histogram data contrasting the additive and multiplicative
models under moment-matched noise laws, plus the pairwise KS distances.

    python scripts/nonuniversality_figure.py [--reps 2000] [--seed 0]
"""

import argparse
import sys

from spikelab.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/figure1")
    args = ap.parse_args()
    return cli_main([
        "nonuniversality", "--reps", str(args.reps),
        "--seed", str(args.seed), "--out", args.out,
    ])


if __name__ == "__main__":
    sys.exit(main())
