#!/usr/bin/env python3
"""Run the resolvent verification battery at the standard protocol size
(N = 200 vs 800, 50 seeds) and exit nonzero if any check fails.

    python scripts/verify_locallaw.py [--n 200] [--seeds 50]
"""

import argparse
import sys

from spikelab.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/verify")
    args = ap.parse_args()
    return cli_main([
        "verify", "--n", str(args.n), "--seeds", str(args.seeds),
        "--seed", str(args.seed), "--out", args.out,
    ])


if __name__ == "__main__":
    sys.exit(main())
