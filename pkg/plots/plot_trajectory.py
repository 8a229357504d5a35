#!/usr/bin/env python3
"""Render a 2-D trajectory comparison from trajectory CSVs (t,px,py,vx,vy).

Usage: plot_trajectory.py trajectory_truth.csv trajectory_optimum.csv
                          trajectory_final_rp3.csv [...] [--labels a,b,...] -o fig.png
"""

import argparse
import sys

from rp3sim_plots import PlotInputError, plot_trajectory


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("csvs", nargs="+")
    parser.add_argument("--labels", default=None, help="comma-separated series labels")
    parser.add_argument("-o", "--out", required=True)
    args = parser.parse_args(argv)
    labels = args.labels.split(",") if args.labels else None
    try:
        plot_trajectory(args.csvs, args.out, labels=labels)
    except PlotInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
