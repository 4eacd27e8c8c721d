#!/usr/bin/env python3
"""Regenerate the size table and all three power tables.

Desk-scale default: 0.2 x the published replication counts.  Results land in
out/tables/ as CSV + JSON sidecars.

    python scripts/reproduce_tables.py [--scale 0.2] [--seed 0]
"""

import argparse
import sys

from spikelab.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scale", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/tables")
    args = ap.parse_args()

    for table in (1, 2, 3, 4):
        code = cli_main([
            "reproduce", "--table", str(table), "--scale", str(args.scale),
            "--seed", str(args.seed), "--out", args.out,
        ])
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
