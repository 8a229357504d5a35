"""Seed-batched resilient runs on a fixed graph and problem.

Vectorizes the full protocol (trust rounds, weights, message exchange, update)
across Monte-Carlo seeds for consensus-style problems with broadcast attacks.
Semantics match protocol.run with a shared topology and problem instance; the
per-pair observation streams use the same seed derivation, so run s here is
draw-identical to the serial engine with that seed (verified in tests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import perron_vectors
from .graph import DirectedGraph
from .optim import AllSpace, Ball, Box, ConstraintSet, SetSequence
from .problems import Problem
from .protocol import AttackContext, AttackModel, NoAttack, nominal_weight_matrices
from .trust import PURPOSE_TRUST, TrustModelParams, TrustProtocol, t_max_from_series


@dataclass
class BatchSpec:
    graph: DirectedGraph
    problem: Problem
    seeds: list[int]
    s_seq: SetSequence
    x_seq: SetSequence | None
    eta: float
    lam: float
    iterations: int
    trust_params: TrustModelParams
    attack: AttackModel | None = None
    observation_window: int = 0
    init: np.ndarray | None = None


@dataclass
class BatchResult:
    seeds: list[int]
    errors: np.ndarray  # (S, K+1, 3): optimality, consensus, tracking
    max_dev: np.ndarray  # (S, K+1)
    s_norm_sum: np.ndarray  # (S, K+1)
    s_proj_active: np.ndarray  # (S, K)
    t_max_trust: list[int | None]
    x_star: np.ndarray

    def mean_errors(self) -> np.ndarray:
        return self.errors.mean(axis=0)


class _BatchStreams:
    """Per-seed, per-pair observation streams (chunked).

    The buffer is (seeds, pairs, chunk); the moderate chunk keeps large
    seed batches within a couple hundred megabytes.
    """

    def __init__(self, g: DirectedGraph, params: TrustModelParams, seeds, chunk=256):
        proto = TrustProtocol(g)
        self.pairs = proto.pairs
        roles = g.roles
        self._dists = [params.legit if roles[j] == "L" else params.malicious for _, j in self.pairs]
        self._gens = [
            [
                np.random.Generator(np.random.PCG64(np.random.SeedSequence([s, PURPOSE_TRUST, i, j])))
                for i, j in self.pairs
            ]
            for s in seeds
        ]
        self._chunk = chunk
        self._buf = np.empty((len(seeds), len(self.pairs), chunk))
        self._pos = chunk

    def draw_all(self) -> np.ndarray:
        if self._pos >= self._chunk:
            for si, gens in enumerate(self._gens):
                for pi, (gen, dist) in enumerate(zip(gens, self._dists)):
                    self._buf[si, pi] = dist.sample(gen, size=self._chunk)
            self._pos = 0
        col = self._buf[:, :, self._pos].copy()
        self._pos += 1
        return col


def _project_rows_batch(constraint: ConstraintSet, rows: np.ndarray) -> np.ndarray:
    """Project (..., d) points; supports the closed-form set kinds."""
    if isinstance(constraint, AllSpace):
        return rows
    if isinstance(constraint, Box):
        return np.clip(rows, constraint.lo, constraint.hi)
    if isinstance(constraint, Ball):
        v = rows - constraint.center
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        scale = np.ones_like(nrm)
        np.divide(constraint.radius, nrm, out=scale, where=nrm > constraint.radius)
        return constraint.center + v * scale
    flat = rows.reshape(-1, rows.shape[-1])
    return np.stack([constraint.project(r) for r in flat]).reshape(rows.shape)


def run_batch(spec: BatchSpec) -> BatchResult:
    g = spec.graph
    problem = spec.problem
    n, n_l = g.n, g.n_legit
    legit = g.legit
    mal = g.malicious
    S = len(spec.seeds)
    K = spec.iterations
    dim = problem.dim

    r_bar, c_bar = nominal_weight_matrices(g)
    phi, pi = perron_vectors(r_bar, c_bar)
    from .problems import centralized_solve, consensus_optimum

    x_star = consensus_optimum(problem) if problem.kind == "consensus" else centralized_solve(problem).x_star

    attack = spec.attack if spec.attack is not None else NoAttack()
    ctx = AttackContext(g=g, x_star=x_star, constraint=problem.constraint, dim=dim,
                        rng=np.random.default_rng(0))
    if len(mal):
        attack.prepare(ctx)

    # trust state, batched over seeds
    ref = TrustProtocol(g, adversary_opinions=attack.opinion_vector(g))
    in_mask = ref.in_mask
    out_mask = ref.out_mask
    pair_rows, pair_cols = ref._pair_rows, ref._pair_cols
    lie = ref._lie
    beta = np.zeros((S, len(ref.pairs)))
    opinions = np.tile(ref.opinions[None, :, :], (S, 1, 1))
    o_full = np.tile(ref._o_full[None, :, :], (S, 1, 1))
    is_legit_col = ref._is_legit_col
    self_rows = np.arange(n_l)

    streams = _BatchStreams(g, spec.trust_params, spec.seeds)
    total_rounds = spec.observation_window + K
    correct = np.zeros((S, total_rounds), dtype=bool)

    def trust_round(idx):
        nonlocal beta, opinions
        alphas = streams.draw_all()
        beta += alphas - 0.5
        ind = np.zeros((S, n_l, n))
        ind[:, pair_rows, pair_cols] = (beta >= 0.0).astype(float)
        ind[:, self_rows, legit] = 1.0
        trusted_in = in_mask[None, :, :] & (ind >= 0.5)
        weights = trusted_in / trusted_in.sum(axis=2, keepdims=True)
        prop = np.einsum("sln,snm->slm", weights, o_full)
        opinions = np.where(in_mask[None, :, :], ind, prop)
        o_full[:, legit, :] = opinions
        verdicts = opinions >= 0.5
        correct[:, idx] = (verdicts == is_legit_col[None, None, :]).all(axis=(1, 2))
        return trusted_in

    for w in range(spec.observation_window):
        trust_round(w)

    if spec.init is not None:
        x0 = np.asarray(spec.init, dtype=float).reshape(n_l, dim)
    elif problem.kind == "consensus":
        x0 = np.asarray(problem.extras["values"], dtype=float).reshape(n_l, dim)
    else:
        x0 = np.zeros((n_l, dim))
    X = np.tile(x0[None, :, :], (S, 1, 1))
    Z = X.copy()
    Sv = np.zeros((S, n_l, dim))
    Sv_prev = np.zeros((S, n_l, dim))
    values = problem.extras.get("values") if problem.kind == "consensus" else None

    errors = np.empty((S, K + 1, 3))
    max_dev = np.empty((S, K + 1))
    s_norm_sum = np.empty((S, K + 1))
    s_active = np.zeros((S, K), dtype=bool)

    def batch_grads(xs):
        if values is not None:
            return 2.0 * (xs - values[None, :, :])
        return np.einsum("nij,snj->sni", problem.hessians, xs) + problem.grad0[None, :, :]

    def record(idx):
        diff = X - x_star[None, None, :]
        errors[:, idx, 0] = np.sqrt(np.einsum("l,sld->s", phi, diff * diff))
        pd = X[:, :, None, :] - X[:, None, :, :]
        pair = np.einsum("slmd->slm", pd * pd)
        errors[:, idx, 1] = np.sqrt(np.einsum("l,slm,m->s", phi, pair, phi))
        y = Sv - Sv_prev
        total = y.sum(axis=1)
        dev = y / pi[None, :, None] - total[:, None, :]
        errors[:, idx, 2] = np.sqrt(np.einsum("l,sld->s", pi, dev * dev))
        max_dev[:, idx] = np.abs(diff).max(axis=(1, 2))
        s_norm_sum[:, idx] = np.linalg.norm(Sv, axis=2).sum(axis=1)

    record(0)
    for k in range(K):
        trusted_in = trust_round(spec.observation_window + k)
        in_counts = trusted_in.sum(axis=2, keepdims=True)
        r_w = trusted_in / in_counts
        trusted_out = out_mask[None, :, :] & (opinions >= 0.5)
        out_counts = trusted_out.sum(axis=2)
        c_cols = trusted_out / out_counts[:, :, None]  # (S, sender, receiver over n)
        c_block = np.transpose(c_cols[:, :, legit], (0, 2, 1))  # (S, receiver, sender)
        accept_legit = trusted_in[:, :, legit]

        grads = batch_grads(X)
        d_next = np.einsum("sij,sjd->sid", c_block * accept_legit, Sv) + grads
        if len(mal):
            emission = attack.emit(k, ctx)
            s_att = spec.s_seq.clip(emission.s, k)
            x_eff_radius = spec.x_seq.radius(k) if spec.x_seq is not None else math.inf
            z_att = _project_rows_batch(problem.constraint, emission.z)
            if math.isfinite(x_eff_radius):
                nrm = np.linalg.norm(z_att, axis=-1, keepdims=True)
                scale = np.ones_like(nrm)
                np.divide(x_eff_radius, nrm, out=scale, where=nrm > x_eff_radius)
                z_att = z_att * scale
            accept_mal = trusted_in[:, :, mal].astype(float)
            d_next += np.einsum("sim,md->sid", accept_mal, s_att)

        radius = spec.s_seq.radius(k)
        norms = np.linalg.norm(d_next, axis=2)
        s_active[:, k] = (norms > radius + 1e-15).any(axis=1)
        if math.isfinite(radius):
            scale = np.ones_like(norms)
            np.divide(radius, norms, out=scale, where=norms > radius)
            s_next = d_next * scale[:, :, None]
        else:
            s_next = d_next

        x_next = np.einsum("sij,sjd->sid", r_w[:, :, legit], Z)
        if len(mal):
            x_next += np.einsum("sim,md->sid", r_w[:, :, mal], z_att)

        target = x_next - spec.eta * (s_next - Sv)
        if spec.x_seq is not None and math.isfinite(spec.x_seq.radius(k)):
            rad = spec.x_seq.radius(k)
            proj = _project_rows_batch(problem.constraint, target)
            nrm = np.linalg.norm(proj, axis=-1, keepdims=True)
            scale = np.ones_like(nrm)
            np.divide(rad, nrm, out=scale, where=nrm > rad)
            proj = proj * scale
        else:
            proj = _project_rows_batch(problem.constraint, target)
        z_next = (1.0 - spec.lam) * x_next + spec.lam * proj

        Sv_prev = Sv
        Sv = s_next
        X = x_next
        Z = z_next
        record(k + 1)

    t_max = [t_max_from_series(correct[s]) for s in range(S)]
    return BatchResult(
        seeds=list(spec.seeds),
        errors=errors,
        max_dev=max_dev,
        s_norm_sum=s_norm_sum,
        s_proj_active=s_active,
        t_max_trust=t_max,
        x_star=x_star,
    )


def simulate_learning_batch(
    g: DirectedGraph,
    params: TrustModelParams,
    seeds,
    horizon: int,
    adversary_opinions: np.ndarray | None = None,
) -> list[int | None]:
    """Batched trust-only simulation; returns per-seed stabilization times."""
    ref = TrustProtocol(g, adversary_opinions)
    S = len(seeds)
    n, n_l = g.n, g.n_legit
    legit = g.legit
    beta = np.zeros((S, len(ref.pairs)))
    o_full = np.tile(ref._o_full[None, :, :], (S, 1, 1))
    in_mask = ref.in_mask
    pair_rows, pair_cols = ref._pair_rows, ref._pair_cols
    is_legit_col = ref._is_legit_col
    self_rows = np.arange(n_l)
    streams = _BatchStreams(g, params, seeds)
    correct = np.zeros((S, horizon), dtype=bool)
    for k in range(horizon):
        alphas = streams.draw_all()
        beta += alphas - 0.5
        ind = np.zeros((S, n_l, n))
        ind[:, pair_rows, pair_cols] = (beta >= 0.0).astype(float)
        ind[:, self_rows, legit] = 1.0
        trusted_in = in_mask[None, :, :] & (ind >= 0.5)
        weights = trusted_in / trusted_in.sum(axis=2, keepdims=True)
        prop = np.einsum("sln,snm->slm", weights, o_full)
        opinions = np.where(in_mask[None, :, :], ind, prop)
        o_full[:, legit, :] = opinions
        verdicts = opinions >= 0.5
        correct[:, k] = (verdicts == is_legit_col[None, None, :]).all(axis=(1, 2))
    return [t_max_from_series(correct[s]) for s in range(S)]
