"""The seed-batched engine must reproduce the serial engine run for run."""

from pathlib import Path

import numpy as np
import pytest

from rp3sim.batch import BatchSpec, run_batch, simulate_learning_batch
from rp3sim.graph import TopologySpec, generate_topology
from rp3sim.harness import apply_overrides, parse_config, resolve_run
from rp3sim.protocol import RunSpec, run
from rp3sim.trust import simulate_learning

PROFILES = Path(__file__).resolve().parents[1] / "src" / "rp3sim" / "harness" / "profiles"


def shared_instance_config(profile, extra=()):
    cfg = parse_config(PROFILES / profile)
    return apply_overrides(cfg, ["topology.seed=31", "problem.seed=32", *extra])


@pytest.mark.parametrize("profile,extra", [
    ("consensus_desk.toml", ("run.iterations=150",)),
    ("consensus_unbounded.toml", ("run.iterations=150", "run.observation_window=20")),
])
def test_batch_matches_serial_runs(profile, extra):
    cfg = shared_instance_config(profile, extra)
    spec0, _ = resolve_run(cfg, 0)
    seeds = [cfg.run.seed + i for i in range(3)]
    batch = run_batch(BatchSpec(
        graph=spec0.graph, problem=spec0.problem, seeds=seeds,
        s_seq=spec0.s_seq, x_seq=spec0.x_seq, eta=spec0.eta, lam=spec0.lam,
        iterations=cfg.run.iterations, trust_params=spec0.trust_params,
        attack=spec0.attack, observation_window=cfg.run.observation_window,
    ))
    for idx, seed in enumerate(seeds):
        serial = run(RunSpec(
            graph=spec0.graph, problem=spec0.problem, algorithm="rp3",
            s_seq=spec0.s_seq, x_seq=spec0.x_seq, eta=spec0.eta, lam=spec0.lam,
            iterations=cfg.run.iterations, seed=seed,
            trust_params=spec0.trust_params, attack=spec0.attack,
            observation_window=cfg.run.observation_window,
        ))
        # summation-order differences only: agreement at relative float noise
        scale = 1.0 + np.abs(serial.error_matrix())
        assert (np.abs(batch.errors[idx] - serial.error_matrix()) / scale).max() <= 1e-10
        assert np.abs(batch.max_dev[idx] - serial.max_dev).max() <= 1e-10
        assert np.abs(batch.s_norm_sum[idx] - serial.s_norm_sum).max() <= 1e-8
        assert batch.t_max_trust[idx] == serial.t_max_trust
        assert np.array_equal(batch.s_proj_active[idx], serial.s_proj_active)


def test_learning_batch_matches_serial():
    g = generate_topology(
        TopologySpec(kind="cycle-plus-random", edge_prob=0.4, attach_prob=0.8),
        5, 3, np.random.default_rng(7),
    )
    from rp3sim.trust import paper_trust_params

    params = paper_trust_params()
    seeds = [11, 12, 13, 14]
    batched = simulate_learning_batch(g, params, seeds, horizon=900)
    for seed, t_batch in zip(seeds, batched):
        t_serial, _ = simulate_learning(g, params, seed=seed, horizon=900)
        assert t_batch == t_serial
