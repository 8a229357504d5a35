#!/usr/bin/env python3
"""Render a semilog convergence figure from aggregate (and optional bounds) CSVs.

Usage: plot_convergence.py <aggregate.csv> [more_aggregates.csv ...]
                           [--bounds bounds.csv] [--labels a,b,...]
                           [--column opt_mean] [--linear] -o fig.png

A bare second positional CSV named *bounds* style can also be passed as
`plot_convergence.py aggregate.csv bounds.csv -o fig.png`.
"""

import argparse
import sys

from rp3sim_plots import PlotInputError, plot_convergence


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("csvs", nargs="+", help="aggregate CSVs (a bounds.csv may be last)")
    parser.add_argument("--bounds", default=None)
    parser.add_argument("--labels", default=None, help="comma-separated series labels")
    parser.add_argument("--column", default="opt_mean")
    parser.add_argument("--linear", action="store_true", help="linear y axis")
    parser.add_argument("-o", "--out", required=True)
    args = parser.parse_args(argv)
    aggregates = list(args.csvs)
    bounds = args.bounds
    if bounds is None and len(aggregates) > 1 and "bounds" in aggregates[-1]:
        bounds = aggregates.pop()
    labels = args.labels.split(",") if args.labels else None
    try:
        plot_convergence(aggregates, bounds, args.out, labels=labels,
                         column=args.column, logy=not args.linear)
    except PlotInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
