"""Experiment orchestration: seed derivation, replication, file outputs.

Per-run randomness derives from the effective seed `run.seed + index`, so a
replication batch is bit-reproducible run by run and adding replications never
changes earlier runs. Fixing topology.seed or problem.seed shares that piece
across all replications (required for a single theory curve to apply).
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..analysis import (
    build_M,
    contraction_params,
    expected_bound_compact,
    expected_bound_unbounded,
    perron_vectors,
    spectral_radius,
    step_size_bounds,
)
from ..graph import DirectedGraph, TopologySpec, generate_topology, load_graph_file, validate_assumptions
from ..optim import (
    AllSpace,
    Ball,
    Box,
    CustomRadius,
    ExpRadius,
    LinearRadius,
    SetSequence,
    UnboundedRadius,
    gradient_bound,
)
from ..problems import (
    Problem,
    TrackingSpec,
    centralized_solve,
    consensus_problem,
    random_quadratic_problem,
    simulate_target,
    tracking_costs,
)
from ..protocol import RunSpec, make_attack, nominal_weight_matrices, run
from ..results import RunResult
from ..trust import LearningBounds, TrustModelParams, UniformDist, delta_exp
from .config import SimConfig

PURPOSE_TOPOLOGY = 21
PURPOSE_PROBLEM = 22
PURPOSE_INIT = 23


class ExperimentError(Exception):
    pass


def _rng(*entropy) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def effective_seed(cfg: SimConfig, index: int) -> int:
    return cfg.run.seed + index


def build_graph(cfg: SimConfig, index: int) -> DirectedGraph:
    top = cfg.topology
    if top.file:
        g = load_graph_file(top.file)
        report = validate_assumptions(g)
        if not report.ok:
            raise ExperimentError(f"topology file fails assumptions: {report.failures()}")
        return g
    seed = top.seed if top.seed is not None else effective_seed(cfg, index)
    spec = TopologySpec(
        kind=top.generator,
        edge_prob=top.edge_prob,
        attach_prob=top.attach_prob,
        undirected=top.undirected,
    )
    return generate_topology(spec, top.n_legitimate, top.n_malicious, _rng(seed, PURPOSE_TOPOLOGY))


def build_constraint(cfg: SimConfig, dim: int):
    c = cfg.constraint
    if c.kind == "all-space":
        return AllSpace()
    if c.kind == "ball":
        return Ball(np.zeros(dim), c.radius)
    return Box(np.full(dim, c.lo), np.full(dim, c.hi))


def build_problem(cfg: SimConfig, g: DirectedGraph, index: int) -> Problem:
    seed = cfg.problem.seed if cfg.problem.seed is not None else effective_seed(cfg, index)
    rng = _rng(seed, PURPOSE_PROBLEM)
    kind = cfg.problem.kind
    n_l = g.n_legit
    if kind == "consensus":
        values = rng.uniform(cfg.problem.value_low, cfg.problem.value_high, size=(n_l, cfg.problem.dim))
        return consensus_problem(values, build_constraint(cfg, cfg.problem.dim))
    if kind == "quadratic":
        return random_quadratic_problem(
            n_l, cfg.problem.dim, rng, constraint=build_constraint(cfg, cfg.problem.dim)
        )
    spec = TrackingSpec(
        horizon=cfg.problem.horizon,
        n_robots=n_l,
        process_noise=cfg.problem.process_noise,
        obs_noise=cfg.problem.obs_noise,
        prior_cov=cfg.problem.prior_cov,
        observation_radius=cfg.problem.observation_radius,
        robot_spacing=cfg.problem.robot_spacing,
    )
    truth, observations = simulate_target(spec, rng)
    return tracking_costs(spec, truth, observations)


def build_trust_params(cfg: SimConfig) -> TrustModelParams:
    t = cfg.trust
    return TrustModelParams(
        legit=UniformDist(t.legit_low, t.legit_high),
        malicious=UniformDist(t.malicious_low, t.malicious_high),
    )


def _grad_bound(cfg: SimConfig, problem: Problem) -> tuple[float | None, bool]:
    if not problem.constraint.bounded:
        return None, False
    G, estimated = gradient_bound(problem.cost_functions(), problem.constraint)
    return G, estimated


def build_set_sequences(cfg: SimConfig, g: DirectedGraph, grad_bound_value: float | None):
    s = cfg.sets

    def poly(coeff, power):
        return CustomRadius(lambda k, c=coeff, p=power: c * float(k) ** p)

    if s.s_kind == "linear":
        s_seq: SetSequence = LinearRadius(s.s_theta)
    elif s.s_kind == "poly":
        s_seq = poly(s.s_coeff, s.s_power)
    elif s.s_kind == "exp":
        s_seq = ExpRadius(s.s_rate)
    elif s.s_kind == "none":
        s_seq = UnboundedRadius()
    else:  # auto-linear: theta = margin * n_L * G
        if grad_bound_value is None:
            raise ExperimentError("auto-linear tracking sets need a compact constraint set")
        s_seq = LinearRadius(s.s_margin * g.n_legit * grad_bound_value)
    if s.x_kind == "none":
        x_seq = None
    elif s.x_kind == "poly":
        x_seq = poly(s.x_coeff, s.x_power)
    else:
        x_seq = ExpRadius(s.x_rate)
    return s_seq, x_seq


@dataclass
class RunAnalysis:
    """Per-topology analysis quantities used for metadata and bound curves."""

    eta: float
    lam: float
    rho: float | None
    grad_bound: float | None
    grad_bound_estimated: bool
    m_matrix: np.ndarray | None
    min_pi: float
    learning: LearningBounds | None
    theta: float | None
    mode: str


def resolve_run(cfg: SimConfig, index: int) -> tuple[RunSpec, RunAnalysis]:
    g = build_graph(cfg, index)
    problem = build_problem(cfg, g, index)
    G, estimated = _grad_bound(cfg, problem)
    s_seq, x_seq = build_set_sequences(cfg, g, G)

    r_bar, c_bar = nominal_weight_matrices(g)
    phi, pi = perron_vectors(r_bar, c_bar)
    params = contraction_params(g.nominal_subgraph(), r_bar, c_bar, phi, pi)
    eta_max, lam_of = step_size_bounds(params, problem.mu, problem.lip)
    eta = cfg.steps.safety * eta_max if cfg.steps.eta == "auto" else float(cfg.steps.eta)
    lam = cfg.steps.safety * lam_of(eta) if cfg.steps.lam == "auto" else float(cfg.steps.lam)
    m = build_M(eta, lam, params, problem.mu, problem.lip)
    try:
        rho = spectral_radius(m)
    except Exception:
        rho = None

    trust_params = build_trust_params(cfg)
    attack = make_attack(cfg.attack.kind, cfg.attack.value)
    theta = s_seq.theta if isinstance(s_seq, LinearRadius) else None
    learning = LearningBounds.from_graph(g) if g.n_malicious or cfg.run.algorithm == "rp3" else None

    seed = effective_seed(cfg, index)
    init = None
    if problem.kind == "quadratic":
        span = min(abs(cfg.constraint.lo), abs(cfg.constraint.hi)) if cfg.constraint.kind == "box" else 2.0
        init = _rng(seed, PURPOSE_INIT).uniform(-span, span, size=(g.n_legit, problem.dim))
        init = np.stack([problem.constraint.project(row) for row in init])

    spec = RunSpec(
        graph=g,
        problem=problem,
        algorithm=cfg.run.algorithm,
        s_seq=s_seq,
        x_seq=x_seq,
        eta=eta,
        lam=lam,
        iterations=cfg.run.iterations,
        seed=seed,
        trust_params=trust_params,
        attack=attack,
        observation_window=cfg.run.observation_window,
        init=init,
        grad_bound=G,
        record_trajectory=cfg.run.record_trajectory or cfg.output.trajectory_csv,
        record_observation_log=cfg.output.observation_log,
        early_stop_max_dev=cfg.run.early_stop,
    )
    analysis = RunAnalysis(
        eta=eta, lam=lam, rho=rho, grad_bound=G, grad_bound_estimated=estimated,
        m_matrix=m, min_pi=float(pi.min()), learning=learning, theta=theta,
        mode=cfg.sets.mode,
    )
    return spec, analysis


def execute_run(cfg: SimConfig, index: int) -> RunResult:
    spec, _ = resolve_run(cfg, index)
    return run(spec)


# ---------------------------------------------------------------------------
# bound curves


def bound_curve(cfg: SimConfig, analysis: RunAnalysis, ks: np.ndarray) -> np.ndarray | None:
    """Expected-error curve on the grid ks, or None when no regime applies."""
    if analysis.rho is None or analysis.rho >= 1.0 or analysis.learning is None:
        return None
    trust_params = build_trust_params(cfg)
    n_l = cfg.topology.n_legitimate
    if (
        analysis.mode == "compact"
        and analysis.theta is not None
        and analysis.grad_bound is not None
        and analysis.theta > n_l * analysis.grad_bound
    ):
        B = build_constraint(cfg, cfg.problem.dim).norm_bound()
        return np.stack([
            expected_bound_compact(
                int(k), analysis.m_matrix, B, analysis.theta, n_l, analysis.min_pi,
                analysis.grad_bound, analysis.learning, trust_params, rho=analysis.rho,
            )
            for k in ks
        ])
    if analysis.mode == "unbounded" and cfg.sets.s_kind == "exp" and cfg.sets.x_kind == "exp":
        lip = None
        # delta_T needs problem constants; rebuild the run-0 problem for them
        g = build_graph(cfg, 0)
        problem = build_problem(cfg, g, 0)
        dt = delta_exp(
            cfg.sets.x_rate, cfg.sets.s_rate, g.n_legit, problem.lip,
            problem.grad0_max_norm(), analysis.learning,
        )
        return np.stack([
            expected_bound_unbounded(
                int(k), analysis.m_matrix, cfg.sets.x_rate, cfg.sets.s_rate,
                g.n_legit, analysis.min_pi, dt, analysis.learning, trust_params,
                rho=analysis.rho,
            )
            for k in ks
        ])
    return None


# ---------------------------------------------------------------------------
# file outputs


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_run_csv(path: Path, res: RunResult) -> None:
    lines = ["seed,k,opt_err,cons_err,track_err,loss"]
    for k in range(len(res.opt)):
        lines.append(
            f"{res.seed},{k},{_fmt(res.opt[k])},{_fmt(res.cons[k])},"
            f"{_fmt(res.track[k])},{_fmt(res.loss[k])}"
        )
    _atomic_write(path, "\n".join(lines) + "\n")


def write_aggregate_csv(path: Path, results: list[RunResult]) -> None:
    k_max = min(len(r.opt) for r in results)
    cols = {
        "opt": np.stack([r.opt[:k_max] for r in results]),
        "cons": np.stack([r.cons[:k_max] for r in results]),
        "track": np.stack([r.track[:k_max] for r in results]),
        "loss": np.stack([r.loss[:k_max] for r in results]),
    }
    header = ["k"]
    for name in cols:
        header += [f"{name}_mean", f"{name}_median", f"{name}_p10", f"{name}_p90"]
    lines = [",".join(header)]
    for k in range(k_max):
        row = [str(k)]
        for name, mat in cols.items():
            vals = mat[:, k]
            row += [
                _fmt(vals.mean()),
                _fmt(np.median(vals)),
                _fmt(np.quantile(vals, 0.1)),
                _fmt(np.quantile(vals, 0.9)),
            ]
        lines.append(",".join(row))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_bounds_csv(path: Path, ks: np.ndarray, curve: np.ndarray) -> None:
    lines = ["k,opt_bound,cons_bound,track_bound"]
    for k, row in zip(ks, curve):
        lines.append(f"{int(k)},{_fmt(row[0])},{_fmt(row[1])},{_fmt(row[2])}")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_observation_log(path: Path, res: RunResult) -> None:
    lines = ["k,i,j,alpha"]
    for k, i, j, a in res.observation_log:
        lines.append(f"{k},{i},{j},{_fmt(a)}")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_trajectory_csvs(out: Path, cfg: SimConfig, results: list[RunResult]) -> list[Path]:
    """Ground truth, oracle optimum, and final estimates as (t, px, py, vx, vy) rows."""
    g = build_graph(cfg, 0)
    problem = build_problem(cfg, g, 0)
    if problem.kind != "tracking":
        return []
    horizon = cfg.problem.horizon
    paths = []

    def dump(name, stacked):
        rows = ["t,px,py,vx,vy"]
        arr = np.asarray(stacked, dtype=float).reshape(horizon, 4)
        for t in range(horizon):
            rows.append(
                f"{t},{_fmt(arr[t, 0])},{_fmt(arr[t, 1])},{_fmt(arr[t, 2])},{_fmt(arr[t, 3])}"
            )
        p = out / f"trajectory_{name}.csv"
        _atomic_write(p, "\n".join(rows) + "\n")
        paths.append(p)

    dump("truth", problem.extras["truth"])
    dump("optimum", centralized_solve(problem).x_star)
    final_mean = results[0].final_x.mean(axis=0)
    dump(f"final_{results[0].algorithm}", final_mean)
    return paths


@dataclass
class ExperimentOutput:
    results: list[RunResult]
    out_dir: Path
    files: list[Path] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)


def _child_run(args) -> RunResult:
    cfg, index = args
    return execute_run(cfg, index)


def run_experiment(cfg: SimConfig, out_dir: str | Path | None = None, threads: int = 1) -> ExperimentOutput:
    """Execute all replications and write the experiment files."""
    out = Path(out_dir) if out_dir is not None else Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    indices = list(range(cfg.run.replications))
    if threads > 1 and len(indices) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_child_run, [(cfg, i) for i in indices]))
    else:
        results = [execute_run(cfg, i) for i in indices]

    _, analysis = resolve_run(cfg, 0)
    files: list[Path] = []
    if cfg.output.per_run_csv:
        for res in results:
            p = out / f"run_{res.seed}.csv"
            write_run_csv(p, res)
            files.append(p)
    if cfg.output.aggregate_csv:
        p = out / "aggregate.csv"
        write_aggregate_csv(p, results)
        files.append(p)
    ks = np.arange(min(len(r.opt) for r in results))
    curve = bound_curve(cfg, analysis, ks) if cfg.output.bounds_csv else None
    if curve is not None:
        p = out / "bounds.csv"
        write_bounds_csv(p, ks, curve)
        files.append(p)
    if cfg.output.observation_log:
        for res in results:
            if res.observation_log is not None:
                p = out / f"observations_{res.seed}.csv"
                write_observation_log(p, res)
                files.append(p)
    if cfg.output.trajectory_csv and cfg.problem.kind == "tracking":
        files.extend(write_trajectory_csvs(out, cfg, results))

    metadata = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "eta": analysis.eta,
        "lam": analysis.lam,
        "rho_m": analysis.rho,
        "grad_bound": analysis.grad_bound,
        "grad_bound_estimated": analysis.grad_bound_estimated,
        "bound_curve_written": curve is not None,
        "elapsed_seconds": time.time() - t0,
        "runs": [
            {
                "seed": r.seed,
                "iterations_done": r.metadata.get("iterations_done"),
                "t_max_trust": r.t_max_trust,
                "t_max": r.t_max,
                "first_s_inactive": r.first_s_inactive,
                "t_nom_bound": r.t_nom_bound,
                "final_opt_err": float(r.opt[-1]),
                "final_max_dev": float(r.max_dev[-1]),
                "final_loss": float(r.loss[-1]),
            }
            for r in results
        ],
    }
    meta_path = out / "metadata.json"
    _atomic_write(meta_path, json.dumps(metadata, indent=2, sort_keys=True) + "\n")
    files.append(meta_path)
    return ExperimentOutput(results=results, out_dir=out, files=files, metadata=metadata)
