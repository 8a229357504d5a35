"""Figure regeneration checks (the secondary acceptance criterion).

The data flows only through the primary package's public surfaces: the `rp3sim`
CLI produces the CSVs (same shipped profiles as the full-scale experiments, at
reduced iteration counts), and the plot scripts are invoked as commands.
"""

import subprocess
import sys
from pathlib import Path

import pytest

HERE = Path(__file__).resolve()
PLOTS = HERE.parents[1]
REPO = PLOTS.parent
PROFILES = REPO / "src" / "rp3sim" / "harness" / "profiles"


def run_cli(*args):
    proc = subprocess.run(
        [sys.executable, "-m", "rp3sim.harness.cli", *args],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr + proc.stdout
    return proc


def run_script(name, *args, expect=0):
    proc = subprocess.run(
        [sys.executable, str(PLOTS / name), *args],
        capture_output=True, text=True,
    )
    assert proc.returncode == expect, proc.stderr + proc.stdout
    return proc


@pytest.fixture(scope="module")
def consensus_csvs(tmp_path_factory):
    out = tmp_path_factory.mktemp("consensus")
    run_cli("run", str(PROFILES / "consensus_paper.toml"),
            "--out-dir", str(out), "--override", "run.iterations=400")
    return out


@pytest.fixture(scope="module")
def bounded_csvs(tmp_path_factory):
    # auto step sizes give rho(M) < 1, so the expected-rate bound CSV is written
    out = tmp_path_factory.mktemp("bounded")
    run_cli("run", str(PROFILES / "consensus_desk.toml"), "--out-dir", str(out),
            "--override", "run.iterations=250", "--override", "run.replications=3",
            "--override", "steps.eta=auto", "--override", "steps.lam=auto",
            "--override", "topology.seed=11", "--override", "problem.seed=12")
    assert (out / "bounds.csv").exists()
    return out


@pytest.fixture(scope="module")
def tracking_csvs(tmp_path_factory):
    out = tmp_path_factory.mktemp("tracking")
    run_cli("run", str(PROFILES / "tracking_paper.toml"), "--out-dir", str(out),
            "--override", "run.iterations=300", "--override", "output.trajectory_csv=true")
    out_ppp = tmp_path_factory.mktemp("tracking_ppp")
    run_cli("run", str(PROFILES / "tracking_paper.toml"), "--out-dir", str(out_ppp),
            "--override", "run.iterations=300", "--override", "output.trajectory_csv=true",
            "--override", "run.algorithm=ppp")
    return out, out_ppp


def test_criterion13_convergence_figure(consensus_csvs, tmp_path):
    fig = tmp_path / "convergence.png"
    run_script("plot_convergence.py", str(consensus_csvs / "aggregate.csv"),
               "-o", str(fig), "--labels", "resilient")
    assert fig.exists() and fig.stat().st_size > 1000


def test_criterion13_trajectory_figure(tracking_csvs, tmp_path):
    out, out_ppp = tracking_csvs
    fig = tmp_path / "trajectory.png"
    run_script(
        "plot_trajectory.py",
        str(out / "trajectory_truth.csv"),
        str(out / "trajectory_optimum.csv"),
        str(out / "trajectory_final_rp3.csv"),
        str(out_ppp / "trajectory_final_ppp.csv"),
        "--labels", "target,optimum,resilient,attacked-baseline",
        "-o", str(fig),
    )
    assert fig.exists() and fig.stat().st_size > 1000


def test_bound_overlay_and_domination(bounded_csvs, tmp_path):
    fig = tmp_path / "with_bound.png"
    run_script("plot_convergence.py", str(bounded_csvs / "aggregate.csv"),
               str(bounded_csvs / "bounds.csv"), "-o", str(fig))
    assert fig.exists() and fig.stat().st_size > 1000
    # the bound curve lies above the empirical mean everywhere
    sys.path.insert(0, str(PLOTS))
    try:
        from rp3sim_plots import read_columns
    finally:
        sys.path.pop(0)
    agg = read_columns(bounded_csvs / "aggregate.csv", ["k", "opt_mean"])
    bnd = read_columns(bounded_csvs / "bounds.csv", ["k", "opt_bound"])
    assert (bnd["opt_bound"][: len(agg["k"])] >= agg["opt_mean"]).all()


def test_single_series_figure(bounded_csvs, tmp_path):
    fig = tmp_path / "single.png"
    run_script("plot_convergence.py", str(bounded_csvs / "aggregate.csv"), "-o", str(fig))
    assert fig.exists() and fig.stat().st_size > 0


def test_empty_csv_rejected(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    proc = run_script("plot_convergence.py", str(empty), "-o", str(tmp_path / "x.png"),
                      expect=1)
    assert "empty" in proc.stderr


def test_missing_column_named(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("k,something\n0,1.0\n")
    proc = run_script("plot_convergence.py", str(bad), "-o", str(tmp_path / "x.png"),
                      expect=1)
    assert "opt_mean" in proc.stderr


def test_trajectory_dimension_mismatch(tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    a.write_text("t,px,py,vx,vy\n0,0,0,1,1\n1,1,1,1,1\n")
    b.write_text("t,px,py,vx,vy\n0,0,0,1,1\n")
    proc = run_script("plot_trajectory.py", str(a), str(b),
                      "-o", str(tmp_path / "x.png"), expect=1)
    assert "does not match" in proc.stderr
