"""Command-line interface: run, bounds, validate, sweep."""

from __future__ import annotations

import argparse
import copy
import json
import os
import re
import sys
from pathlib import Path

import numpy as np

USAGE_EXIT = 2
RUNTIME_EXIT = 1


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("RP3_SIM_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rp3sim",
        description="Resilient push-pull optimization simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, overrides=True):
        p.add_argument("config", help="path to a TOML config")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--out-dir", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=_default_threads(),
                       help="parallel replications (env RP3_SIM_THREADS)")
        if overrides:
            p.add_argument("--override", action="append", default=[],
                           metavar="SECTION.KEY=VALUE", help="config override")

    p_run = sub.add_parser("run", help="execute an experiment")
    common(p_run)
    p_run.add_argument("--figures", action="store_true",
                       help="render figures when the plots package is installed")

    p_bounds = sub.add_parser("bounds", help="print contraction parameters and bound curves")
    common(p_bounds)

    p_val = sub.add_parser("validate", help="check config and topology assumptions")
    common(p_val)

    p_sweep = sub.add_parser("sweep", help="run once per value of one parameter")
    common(p_sweep)
    p_sweep.add_argument("--param", required=True, help="section.key to sweep")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    return parser


def _load_config(args):
    from .config import ConfigError, apply_overrides, parse_config

    path = Path(args.config)
    if not path.exists():
        print(f"error: config not found: {path}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)
    try:
        cfg = parse_config(path)
        overrides = list(getattr(args, "override", []) or [])
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        if args.out_dir is not None:
            overrides.append(f"output.dir={args.out_dir}")
        if overrides:
            cfg = apply_overrides(cfg, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        raise SystemExit(USAGE_EXIT)
    return cfg


def cmd_run(args) -> int:
    from .runner import run_experiment

    cfg = _load_config(args)
    out = run_experiment(cfg, threads=args.threads)
    final = [r["final_opt_err"] for r in out.metadata["runs"]]
    print(f"wrote {len(out.files)} files to {out.out_dir}")
    print(f"runs: {len(final)}; final optimality error "
          f"min={min(final):.3e} median={float(np.median(final)):.3e} max={max(final):.3e}")
    if args.figures:
        _render_figures(out)
    return 0


def _render_figures(out) -> None:
    try:
        import rp3sim_plots
    except ImportError:
        print("plots package not installed; skipping figures (pip install ./plots)")
        return
    agg = out.out_dir / "aggregate.csv"
    bounds = out.out_dir / "bounds.csv"
    if agg.exists():
        fig = out.out_dir / "convergence.png"
        rp3sim_plots.plot_convergence(
            [str(agg)], str(bounds) if bounds.exists() else None, str(fig)
        )
        print(f"wrote {fig}")
    trajs = sorted(out.out_dir.glob("trajectory_*.csv"))
    if trajs:
        fig = out.out_dir / "trajectory.png"
        rp3sim_plots.plot_trajectory([str(t) for t in trajs], str(fig))
        print(f"wrote {fig}")


def cmd_bounds(args) -> int:
    from .runner import bound_curve, resolve_run, write_bounds_csv

    cfg = _load_config(args)
    spec, analysis = resolve_run(cfg, 0)
    g = spec.graph
    print(f"agents: {g.n} ({g.n_legit} legitimate, {g.n_malicious} malicious)")
    print(f"eta = {analysis.eta:.6g}   lambda = {analysis.lam:.6g}")
    if analysis.grad_bound is not None:
        tag = "estimated" if analysis.grad_bound_estimated else "exact"
        print(f"gradient bound G = {analysis.grad_bound:.6g} ({tag})")
    print("M(eta, lambda) =")
    for row in analysis.m_matrix:
        print("  " + "  ".join(f"{v: .6e}" for v in row))
    print(f"rho(M) = {analysis.rho!r}")
    ks = np.arange(cfg.run.iterations + 1)
    curve = bound_curve(cfg, analysis, ks)
    if curve is None:
        print("no expected-error curve applies to this set regime")
    else:
        out = Path(args.out_dir) if args.out_dir else Path(cfg.output.dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "bounds.csv"
        write_bounds_csv(path, ks, curve)
        print(f"wrote {path}")
    return 0


def cmd_validate(args) -> int:
    from ..graph import validate_assumptions
    from ..optim import validate_growth
    from .runner import build_graph

    cfg = _load_config(args)
    print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    g = build_graph(cfg, 0)
    report = validate_assumptions(g)
    print(f"agents: {g.n} ({g.n_legit} legitimate, {g.n_malicious} malicious)")
    print(f"legitimate subgraph strongly connected: {report.legit_strongly_connected}")
    print(f"every malicious agent observed:         {report.malicious_all_observed}")
    print(f"self-loops present:                     {report.self_loops_present}")
    if cfg.sets.x_kind == "poly" and cfg.sets.s_kind == "poly":
        growth = validate_growth(
            lambda k: cfg.sets.x_coeff * float(k) ** cfg.sets.x_power,
            lambda k: cfg.sets.s_coeff * float(k) ** cfg.sets.s_power,
            horizon=max(cfg.run.iterations, 100),
        )
        note = "" if growth.classification == "faster" else " (constant-dependent)"
        print(f"tracking-set growth vs k * decision-set growth: {growth.classification}{note}")
    if not report.ok:
        for line in report.failures():
            print(f"  FAIL: {line}")
        return RUNTIME_EXIT
    print("assumptions: all pass")
    return 0


def cmd_sweep(args) -> int:
    from .config import ConfigError, apply_overrides
    from .runner import run_experiment

    cfg = _load_config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        print("error: --values is empty", file=sys.stderr)
        return USAGE_EXIT
    base_out = Path(args.out_dir) if args.out_dir else Path(cfg.output.dir)
    for value in values:
        variant = copy.deepcopy(cfg)
        try:
            variant = apply_overrides(variant, [f"{args.param}={value}"])
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return USAGE_EXIT
        slug = re.sub(r"[^A-Za-z0-9_.-]", "_", f"{args.param}={value}")
        out = run_experiment(variant, out_dir=base_out / slug, threads=args.threads)
        finals = [r["final_opt_err"] for r in out.metadata["runs"]]
        print(f"{args.param}={value}: median final optimality error {float(np.median(finals)):.3e}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_EXIT if exc.code not in (0, None) else 0
    handlers = {
        "run": cmd_run,
        "bounds": cmd_bounds,
        "validate": cmd_validate,
        "sweep": cmd_sweep,
    }
    try:
        return handlers[args.command](args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else RUNTIME_EXIT
    except Exception as exc:  # runtime failure: report and exit 1
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
