import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from rp3sim.harness import (
    ConfigError,
    apply_overrides,
    parse_config,
    parse_config_text,
    run_experiment,
)
from rp3sim.harness.cli import main as cli_main

PROFILES = Path(__file__).resolve().parents[1] / "src" / "rp3sim" / "harness" / "profiles"

MINI = """
[run]
algorithm = "rp3"
iterations = 120
seed = 77
replications = 2

[topology]
generator = "cycle-plus-random"
n_legitimate = 5
n_malicious = 3
edge_prob = 0.4
attach_prob = 0.8

[problem]
kind = "consensus"

[constraint]
kind = "box"
lo = -50.0
hi = 50.0

[sets]
s_kind = "auto-linear"

[steps]
eta = 0.02
lam = 0.5

[attack]
kind = "signed-extreme"
"""


def sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# parsing


def test_paper_consensus_profile_values():
    cfg = parse_config(PROFILES / "consensus_paper.toml")
    assert cfg.topology.n_legitimate == 50 and cfg.topology.n_malicious == 100
    assert cfg.topology.attach_prob == 0.7
    assert cfg.constraint.lo == -50.0 and cfg.constraint.hi == 50.0
    assert cfg.run.observation_window == 30
    assert cfg.trust.legit_low == 0.35 and cfg.trust.legit_high == 0.75
    assert cfg.trust.malicious_low == 0.25 and cfg.trust.malicious_high == 0.65
    # growing set radii 0.1 k (decision) and 0.1 k^2 (tracking)
    assert cfg.sets.x_kind == "poly" and cfg.sets.x_coeff == 0.1 and cfg.sets.x_power == 1.0
    assert cfg.sets.s_kind == "poly" and cfg.sets.s_coeff == 0.1 and cfg.sets.s_power == 2.0


def test_tracking_profile_values():
    cfg = parse_config(PROFILES / "tracking_paper.toml")
    assert cfg.topology.n_legitimate == 9 and cfg.topology.n_malicious == 6
    assert cfg.problem.horizon == 10
    assert cfg.topology.generator == "grid-with-diagonals"


def test_unbounded_profile_rates_ordered():
    cfg = parse_config(PROFILES / "consensus_unbounded.toml")
    assert cfg.sets.s_rate > cfg.sets.x_rate > 0


def test_unbounded_rates_misordered_rejected():
    text = (PROFILES / "consensus_unbounded.toml").read_text()
    bad = text.replace("s_rate = 1.35e-5", "s_rate = 1e-6")
    with pytest.raises(ConfigError, match="s_rate"):
        parse_config_text(bad)


def test_unknown_key_rejected_with_path():
    with pytest.raises(ConfigError, match="run.iterationz"):
        parse_config_text("[run]\niterationz = 5\n")
    with pytest.raises(ConfigError, match=r"\[nope\]"):
        parse_config_text("[nope]\nx = 1\n")


def test_type_errors_rejected():
    with pytest.raises(ConfigError, match="run.iterations"):
        parse_config_text('[run]\niterations = "many"\n')
    with pytest.raises(ConfigError, match="steps.eta"):
        parse_config_text('[steps]\neta = "fast"\n')


def test_compact_mode_needs_bounded_set():
    with pytest.raises(ConfigError, match="compact"):
        parse_config_text('[constraint]\nkind = "all-space"\n')


def test_defaults_echoed_back():
    cfg = parse_config_text(MINI)
    d = cfg.to_dict()
    assert d["trust"]["legit_low"] == 0.35  # default filled
    assert d["run"]["replications"] == 2
    assert len(cfg.config_hash()) == 16


def test_overrides():
    cfg = parse_config_text(MINI)
    cfg = apply_overrides(cfg, ["run.seed=5", "steps.lam=0.25", "topology.undirected=false"])
    assert cfg.run.seed == 5 and cfg.steps.lam == 0.25 and cfg.topology.undirected is False
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["nope.key=1"])
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["run.seed"])


# ---------------------------------------------------------------------------
# running


def test_determinism_checksum(tmp_path):
    cfg = parse_config_text(MINI)
    out_a = run_experiment(cfg, out_dir=tmp_path / "a")
    out_b = run_experiment(cfg, out_dir=tmp_path / "b")
    for name in ("run_77.csv", "run_78.csv", "aggregate.csv"):
        assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name)


def test_seed_independence_of_replication_count(tmp_path):
    cfg = parse_config_text(MINI)
    run_experiment(cfg, out_dir=tmp_path / "two")
    cfg4 = apply_overrides(parse_config_text(MINI), ["run.replications=4"])
    run_experiment(cfg4, out_dir=tmp_path / "four")
    assert sha(tmp_path / "two" / "run_77.csv") == sha(tmp_path / "four" / "run_77.csv")
    assert sha(tmp_path / "two" / "run_78.csv") == sha(tmp_path / "four" / "run_78.csv")
    # run index i reproduces as a single run with seed + i
    cfg_single = apply_overrides(parse_config_text(MINI), ["run.replications=1", "run.seed=78"])
    run_experiment(cfg_single, out_dir=tmp_path / "single")
    assert sha(tmp_path / "single" / "run_78.csv") == sha(tmp_path / "two" / "run_78.csv")


def test_threads_match_serial(tmp_path):
    cfg = parse_config_text(MINI)
    run_experiment(cfg, out_dir=tmp_path / "serial", threads=1)
    run_experiment(cfg, out_dir=tmp_path / "par", threads=2)
    assert sha(tmp_path / "serial" / "aggregate.csv") == sha(tmp_path / "par" / "aggregate.csv")


def test_run_csv_schema(tmp_path):
    cfg = parse_config_text(MINI)
    out = run_experiment(cfg, out_dir=tmp_path)
    header = (tmp_path / "run_77.csv").read_text().splitlines()[0]
    assert header == "seed,k,opt_err,cons_err,track_err,loss"
    rows = (tmp_path / "run_77.csv").read_text().splitlines()
    assert len(rows) == 1 + cfg.run.iterations + 1  # header + K+1 records
    agg_header = (tmp_path / "aggregate.csv").read_text().splitlines()[0].split(",")
    assert agg_header[0] == "k"
    for name in ("opt", "cons", "track", "loss"):
        for stat in ("mean", "median", "p10", "p90"):
            assert f"{name}_{stat}" in agg_header
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["config_hash"] == cfg.config_hash()
    assert len(meta["runs"]) == 2


def test_bounds_csv_written_with_auto_steps(tmp_path):
    cfg = apply_overrides(parse_config_text(MINI), ["steps.eta=auto", "steps.lam=auto"])
    out = run_experiment(cfg, out_dir=tmp_path)
    assert out.metadata["rho_m"] < 1.0
    bounds = tmp_path / "bounds.csv"
    assert bounds.exists()
    header = bounds.read_text().splitlines()[0]
    assert header == "k,opt_bound,cons_bound,track_bound"


def test_bounds_csv_absent_when_rho_geq_one(tmp_path):
    cfg = parse_config_text(MINI)  # practical steps: rho(M) > 1
    out = run_experiment(cfg, out_dir=tmp_path)
    assert not (tmp_path / "bounds.csv").exists()
    assert out.metadata["bound_curve_written"] is False


def test_observation_log_round_trip(tmp_path):
    cfg = apply_overrides(
        parse_config_text(MINI),
        ["output.observation_log=true", "run.replications=1", "run.iterations=30"],
    )
    run_experiment(cfg, out_dir=tmp_path)
    log = (tmp_path / "observations_77.csv").read_text().splitlines()
    assert log[0] == "k,i,j,alpha"
    assert len(log) > 30


def test_tracking_trajectory_csvs(tmp_path):
    cfg = parse_config(PROFILES / "tracking_paper.toml")
    cfg = apply_overrides(cfg, ["run.iterations=50", "output.trajectory_csv=true"])
    run_experiment(cfg, out_dir=tmp_path)
    for name in ("trajectory_truth.csv", "trajectory_optimum.csv", "trajectory_final_rp3.csv"):
        lines = (tmp_path / name).read_text().splitlines()
        assert lines[0] == "t,px,py,vx,vy"
        assert len(lines) == 11


# ---------------------------------------------------------------------------
# CLI


def write_mini(tmp_path):
    p = tmp_path / "mini.toml"
    p.write_text(MINI)
    return p


def test_cli_missing_config_exits_2(capsys):
    assert cli_main(["run", "/nonexistent/config.toml"]) == 2
    assert "not found" in capsys.readouterr().err


def test_cli_bad_usage_exits_2():
    assert cli_main(["frobnicate"]) == 2
    assert cli_main([]) == 2


def test_cli_validate_profiles(capsys, tmp_path):
    for profile in ("consensus_desk.toml", "consensus_paper.toml",
                    "tracking_paper.toml", "consensus_unbounded.toml"):
        code = cli_main(["validate", str(PROFILES / profile)])
        out = capsys.readouterr().out
        assert code == 0, profile
        assert "all pass" in out


def test_cli_run_and_outputs(tmp_path, capsys):
    p = write_mini(tmp_path)
    code = cli_main(["run", str(p), "--out-dir", str(tmp_path / "out"),
                     "--override", "run.replications=1"])
    assert code == 0
    assert (tmp_path / "out" / "run_77.csv").exists()
    assert "final optimality error" in capsys.readouterr().out


def test_cli_bounds_reports_contraction(tmp_path, capsys):
    p = write_mini(tmp_path)
    code = cli_main(["bounds", str(p), "--out-dir", str(tmp_path / "b"),
                     "--override", "steps.eta=auto", "--override", "steps.lam=auto"])
    out = capsys.readouterr().out
    assert code == 0
    rho = float(out.split("rho(M) = ")[1].splitlines()[0])
    assert rho < 1.0
    assert (tmp_path / "b" / "bounds.csv").exists()


def test_cli_bad_override_exits_2(tmp_path, capsys):
    p = write_mini(tmp_path)
    assert cli_main(["run", str(p), "--override", "steps.lam=2.0"]) == 2


def test_cli_sweep(tmp_path, capsys):
    p = write_mini(tmp_path)
    code = cli_main(["sweep", str(p), "--param", "steps.lam", "--values", "0.3,0.6",
                     "--out-dir", str(tmp_path / "sweep"),
                     "--override", "run.replications=1", "--override", "run.iterations=60"])
    assert code == 0
    assert (tmp_path / "sweep" / "steps.lam_0.3" / "aggregate.csv").exists()
    assert (tmp_path / "sweep" / "steps.lam_0.6" / "aggregate.csv").exists()


def test_cli_run_figures_flag_soft(tmp_path, capsys):
    # works whether or not the plots package is installed
    p = write_mini(tmp_path)
    code = cli_main(["run", str(p), "--out-dir", str(tmp_path / "fig"),
                     "--override", "run.replications=1", "--figures"])
    assert code == 0


def test_topology_loaded_from_file(tmp_path):
    from rp3sim.graph import TopologySpec, generate_topology, save_graph_file
    from rp3sim.harness import build_graph

    g = generate_topology(
        TopologySpec(kind="cycle-plus-random", edge_prob=0.4, attach_prob=0.8),
        5, 3, np.random.default_rng(0),
    )
    path = tmp_path / "topo.txt"
    save_graph_file(g, path)
    cfg = apply_overrides(parse_config_text(MINI), [f"topology.file={path}"])
    loaded = build_graph(cfg, 0)
    assert (loaded.adj == g.adj).all() and loaded.roles == g.roles
    out = run_experiment(cfg, out_dir=tmp_path / "out")
    assert out.results[0].metadata["n_legit"] == 5


def test_threads_env_default(monkeypatch):
    from rp3sim.harness.cli import _default_threads

    monkeypatch.setenv("RP3_SIM_THREADS", "3")
    assert _default_threads() == 3
    monkeypatch.setenv("RP3_SIM_THREADS", "junk")
    assert _default_threads() == 1


def test_cli_validate_reports_growth_classification(capsys):
    code = cli_main(["validate", str(PROFILES / "consensus_paper.toml")])
    out = capsys.readouterr().out
    assert code == 0
    assert "equal-order (constant-dependent)" in out
