"""The resilient and nominal push-pull state machines and the adversary.

Messages follow the sender/receiver split of the weight rules: the row matrix
R is chosen receiver-side (uniform over the trusted in-neighborhood), the
column matrix C sender-side (uniform split over the trusted out-neighborhood).
A receiver drops tracking messages from senders it distrusts; malicious
senders inject whole forged messages on both channels, constrained only by
the public sets (decision values inside the effective constraint set,
tracking values inside the current tracking set).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analysis import error_vector, perron_vectors
from .graph import DirectedGraph
from .optim import AllSpace, Ball, ConstraintSet, SetSequence, UnboundedRadius, intersect
from .problems import Problem, centralized_solve, consensus_optimum
from .results import RunResult
from .trust import (
    ObservationStreams,
    TrustModelParams,
    TrustProtocol,
    t_max_from_series,
)

PURPOSE_INIT = 11
PURPOSE_ATTACK = 12


class ProtocolError(Exception):
    pass


@dataclass
class AgentVariables:
    """Stacked per-agent state; row i belongs to agent i (all n agents)."""

    x: np.ndarray
    z: np.ndarray
    s: np.ndarray
    s_prev: np.ndarray
    y: np.ndarray

    @staticmethod
    def initial(n: int, dim: int, x0: np.ndarray, legit: np.ndarray, y0: np.ndarray | None = None):
        x = np.zeros((n, dim))
        x[legit] = x0
        var = AgentVariables(
            x=x, z=x.copy(), s=np.zeros((n, dim)), s_prev=np.zeros((n, dim)), y=np.zeros((n, dim))
        )
        if y0 is not None:
            var.y[legit] = y0
        return var


@dataclass(frozen=True)
class WeightMatrices:
    """R row-stochastic on legitimate rows, C column-stochastic on legitimate
    columns; malicious rows/columns are zero (their output is messages)."""

    R: np.ndarray
    C: np.ndarray


def build_weights(g: DirectedGraph, trusted_in: np.ndarray, trusted_out: np.ndarray) -> WeightMatrices:
    """Uniform mixing weights from the trusted neighborhoods.

    trusted_in / trusted_out are (n_legit, n) boolean matrices over all agents
    (row order = g.legit); both must include self.
    """
    n = g.n
    legit = g.legit
    R = np.zeros((n, n))
    C = np.zeros((n, n))
    in_counts = trusted_in.sum(axis=1)
    out_counts = trusted_out.sum(axis=1)
    if (in_counts == 0).any() or (out_counts == 0).any():
        raise ProtocolError("empty trusted neighborhood; self-loop invariant violated")
    R[legit, :] = trusted_in / in_counts[:, None]
    # sender i splits its mass over trusted out-neighbors: column i of C
    C[:, legit] = (trusted_out / out_counts[:, None]).T
    return WeightMatrices(R=R, C=C)


# ---------------------------------------------------------------------------
# adversary models


@dataclass(frozen=True)
class AttackContext:
    g: DirectedGraph
    x_star: np.ndarray
    constraint: ConstraintSet
    dim: int
    rng: np.random.Generator


@dataclass(frozen=True)
class AttackEmission:
    """Broadcast attack values; rows align with g.malicious. per_edge entries
    ((sender, receiver) -> vector) override the broadcast on single edges."""

    z: np.ndarray
    s: np.ndarray
    y: np.ndarray
    per_edge_z: dict = field(default_factory=dict)
    per_edge_s: dict = field(default_factory=dict)


class AttackModel:
    name = "abstract"

    def prepare(self, ctx: AttackContext) -> None:
        pass

    def emit(self, k: int, ctx: AttackContext) -> AttackEmission:
        raise NotImplementedError

    def opinion_vector(self, g: DirectedGraph) -> np.ndarray:
        from .trust import default_adversary_opinions

        return default_adversary_opinions(g)


class NoAttack(AttackModel):
    name = "none"

    def emit(self, k, ctx):
        n_m = ctx.g.n_malicious
        zero = np.zeros((n_m, ctx.dim))
        return AttackEmission(z=zero, s=zero.copy(), y=zero.copy())


@dataclass
class ExtremeConstant(AttackModel):
    """Broadcast one fixed vector on every channel at every step."""

    value: np.ndarray
    name: str = "extreme-constant"

    def emit(self, k, ctx):
        v = np.broadcast_to(np.atleast_1d(np.asarray(self.value, dtype=float)), (ctx.dim,))
        rows = np.tile(v, (ctx.g.n_malicious, 1))
        return AttackEmission(z=rows, s=rows.copy(), y=rows.copy())


@dataclass
class SignedExtreme(AttackModel):
    """Send the constraint-set extreme opposing the optimum sign, on both the
    decision and tracking channels."""

    name: str = "signed-extreme"
    _raw: np.ndarray | None = None

    def prepare(self, ctx):
        bound = ctx.constraint.norm_bound()
        if not math.isfinite(bound):
            raise ProtocolError("signed-extreme attack needs a compact constraint set")
        sign = np.where(np.asarray(ctx.x_star, dtype=float) >= 0.0, 1.0, -1.0)
        self._raw = -sign * bound

    def emit(self, k, ctx):
        rows = np.tile(self._raw, (ctx.g.n_malicious, 1))
        return AttackEmission(z=rows, s=rows.copy(), y=rows.copy())


@dataclass
class GradientPoison(AttackModel):
    """Poison only the tracking channel; decision messages sit at the set center."""

    value: np.ndarray
    name: str = "gradient-poison"

    def emit(self, k, ctx):
        v = np.broadcast_to(np.atleast_1d(np.asarray(self.value, dtype=float)), (ctx.dim,))
        rows = np.tile(v, (ctx.g.n_malicious, 1))
        zero = np.zeros((ctx.g.n_malicious, ctx.dim))
        return AttackEmission(z=zero, s=rows, y=rows.copy())


@dataclass
class CustomAttack(AttackModel):
    """Per-edge Byzantine values from a callback fn(k, ctx) -> AttackEmission."""

    fn: Callable[[int, AttackContext], AttackEmission]
    name: str = "custom"

    def emit(self, k, ctx):
        return self.fn(k, ctx)


def make_attack(kind: str, value=None) -> AttackModel:
    if kind == "none":
        return NoAttack()
    if kind == "signed-extreme":
        return SignedExtreme()
    if kind == "extreme-constant":
        if value is None:
            raise ValueError("extreme-constant attack needs a value")
        return ExtremeConstant(value=np.atleast_1d(np.asarray(value, dtype=float)))
    if kind == "gradient-poison":
        if value is None:
            raise ValueError("gradient-poison attack needs a value")
        return GradientPoison(value=np.atleast_1d(np.asarray(value, dtype=float)))
    raise ValueError(f"unknown attack kind {kind!r}")


# ---------------------------------------------------------------------------
# message assembly


@dataclass(frozen=True)
class AdversaryMessages:
    """Attack values after set enforcement, plus the broadcast opinion lie."""

    z: np.ndarray
    s: np.ndarray
    y: np.ndarray
    opinions: np.ndarray
    per_edge_z: dict
    per_edge_s: dict


def adversary_messages(
    model: AttackModel,
    k: int,
    ctx: AttackContext,
    x_eff: ConstraintSet,
    s_seq: SetSequence,
) -> AdversaryMessages:
    """Emit one round of attack values with the public-set constraints enforced:
    decision values inside the effective constraint set, tracking values inside
    the step-k tracking set. Per-edge overrides are projected at use."""
    em = model.emit(k, ctx)
    return AdversaryMessages(
        z=_project_rows(x_eff, em.z),
        s=s_seq.clip(em.s, k),
        y=em.y,
        opinions=model.opinion_vector(ctx.g),
        per_edge_z=em.per_edge_z,
        per_edge_s=em.per_edge_s,
    )


def _project_rows(constraint: ConstraintSet, rows: np.ndarray) -> np.ndarray:
    from .optim import Box

    if isinstance(constraint, AllSpace):
        return rows
    if isinstance(constraint, Box):
        return np.clip(rows, constraint.lo, constraint.hi)
    if isinstance(constraint, Ball):
        v = rows - constraint.center[None, :]
        nrm = np.linalg.norm(v, axis=1, keepdims=True)
        scale = np.ones_like(nrm)
        np.divide(constraint.radius, nrm, out=scale, where=nrm > constraint.radius)
        return constraint.center[None, :] + v * scale
    return np.stack([constraint.project(r) for r in rows])


def assemble_messages(
    variables: AgentVariables,
    g: DirectedGraph,
    emission: AttackEmission | None,
    x_eff: ConstraintSet,
    s_seq: SetSequence,
    k: int,
    channels: str = "zsy",
) -> tuple[np.ndarray | None, np.ndarray | None, np.ndarray | None]:
    """(n, d) message stacks for the requested channels among z, s, y.

    Legitimate rows carry the agents' own values; malicious rows carry attack
    values forced into the public sets (z into the effective constraint set,
    s into the step-k tracking set).
    """
    mal = g.malicious
    inject = emission is not None and len(mal) > 0
    z_msgs = s_msgs = y_msgs = None
    if "z" in channels:
        z_msgs = variables.z.copy()
        if inject:
            z_msgs[mal] = _project_rows(x_eff, emission.z)
    if "s" in channels:
        s_msgs = variables.s.copy()
        if inject:
            s_msgs[mal] = s_seq.clip(emission.s, k)
    if "y" in channels:
        y_msgs = variables.y.copy()
        if inject:
            y_msgs[mal] = emission.y
    return z_msgs, s_msgs, y_msgs


# ---------------------------------------------------------------------------
# one-step updates


@dataclass(frozen=True)
class StepInfo:
    s_projection_active: bool
    tracking_residual: float


def rp3_step(
    variables: AgentVariables,
    g: DirectedGraph,
    weights: WeightMatrices,
    accept: np.ndarray,
    z_msgs: np.ndarray,
    s_msgs: np.ndarray,
    problem: Problem,
    s_seq: SetSequence,
    x_eff: ConstraintSet,
    eta: float,
    lam: float,
    k: int,
    per_edge_z: dict | None = None,
    per_edge_s: dict | None = None,
) -> tuple[AgentVariables, StepInfo]:
    """One resilient update: tracking mix + projection, consensus, lazy step.

    accept is the (n_legit, n) boolean trusted-in matrix; tracking messages
    from distrusted senders are dropped, which is what lets the mixing matrix
    settle to the nominal legitimate-only weights once learning finishes.
    """
    legit = g.legit
    mal = g.malicious
    grads = problem.batch_grad(variables.x[legit])

    w_s = weights.C[legit, :].copy()
    w_s[:, legit] *= accept[:, legit]
    if len(mal):
        w_s[:, mal] = accept[:, mal].astype(float)
    if per_edge_s:
        clipped = {
            edge: s_seq.clip(np.atleast_2d(np.asarray(v, dtype=float)), k)[0]
            for edge, v in per_edge_s.items()
        }
        d_next = _mixed_with_overrides(w_s, s_msgs, clipped, legit, g)
    else:
        d_next = w_s @ s_msgs
    d_next = d_next + grads

    radius = s_seq.radius(k)
    norms = np.linalg.norm(d_next, axis=1)
    active = bool((norms > radius + 1e-15).any())
    s_next = s_seq.clip(d_next, k)

    r_w = weights.R[legit, :]
    if per_edge_z:
        forced = {edge: x_eff.project(np.asarray(v, dtype=float)) for edge, v in per_edge_z.items()}
        x_next = _mixed_with_overrides(r_w, z_msgs, forced, legit, g)
    else:
        x_next = r_w @ z_msgs

    s_cur = variables.s[legit]
    target = x_next - eta * (s_next - s_cur)
    z_next = (1.0 - lam) * x_next + lam * _project_rows(x_eff, target)

    residual = float(
        np.linalg.norm(s_next.sum(axis=0) - s_cur.sum(axis=0) - grads.sum(axis=0))
    )

    # every row is overwritten below, so allocate fresh arrays; the previous
    # tracking stack is aliased (never mutated) rather than copied
    nxt = AgentVariables(
        x=np.empty_like(variables.x), z=np.empty_like(variables.z),
        s=np.empty_like(variables.s), s_prev=variables.s, y=variables.y,
    )
    nxt.x[legit] = x_next
    nxt.z[legit] = z_next
    nxt.s[legit] = s_next
    if len(mal):
        nxt.x[mal] = z_msgs[mal]
        nxt.z[mal] = z_msgs[mal]
        nxt.s[mal] = s_msgs[mal]
    return nxt, StepInfo(s_projection_active=active, tracking_residual=residual)


def _mixed_with_overrides(w, msgs, overrides, legit, g):
    out = w @ msgs
    legit_row = {int(a): r for r, a in enumerate(legit)}
    for (sender, receiver), vec in overrides.items():
        if receiver not in legit_row:
            continue
        row = legit_row[receiver]
        coeff = w[row, sender]
        if coeff == 0.0:
            continue
        out[row] += coeff * (np.asarray(vec, dtype=float) - msgs[sender])
    return out


def ppp_step(
    variables: AgentVariables,
    g: DirectedGraph,
    weights: WeightMatrices,
    z_msgs: np.ndarray,
    y_msgs: np.ndarray,
    problem: Problem,
    constraint: ConstraintSet,
    eta: float,
    lam: float,
) -> AgentVariables:
    """One nominal push-pull update (oblivious to roles; static weights)."""
    legit = g.legit
    mal = g.malicious
    w_y = weights.C[legit, :].copy()
    if len(mal):
        w_y[:, mal] = g.adj[mal][:, legit].T.astype(float)
    x_next = weights.R[legit, :] @ z_msgs
    grad_new = problem.batch_grad(x_next)
    grad_old = problem.batch_grad(variables.x[legit])
    y_next = w_y @ y_msgs + grad_new - grad_old
    z_next = (1.0 - lam) * x_next + lam * _project_rows(constraint, x_next - eta * y_next)
    nxt = AgentVariables(
        x=np.empty_like(variables.x), z=np.empty_like(variables.z),
        s=variables.s, s_prev=variables.s_prev, y=np.empty_like(variables.y),
    )
    nxt.x[legit] = x_next
    nxt.z[legit] = z_next
    nxt.y[legit] = y_next
    if len(mal):
        nxt.x[mal] = z_msgs[mal]
        nxt.z[mal] = z_msgs[mal]
        nxt.y[mal] = y_msgs[mal]
    return nxt


# ---------------------------------------------------------------------------
# nominal weights helper


def nominal_weight_matrices(g: DirectedGraph) -> tuple[np.ndarray, np.ndarray]:
    """Legitimate-only uniform mixing matrices (R̄ row, C̄ column stochastic)."""
    sub = g.nominal_subgraph()
    adj = sub.adj.astype(float)
    r_bar = adj.T / adj.T.sum(axis=1, keepdims=True)  # row i uniform over in-neighbors
    c_bar = (adj / adj.sum(axis=1, keepdims=True)).T  # column j = sender j's split
    return r_bar, c_bar


# ---------------------------------------------------------------------------
# full run


@dataclass
class RunSpec:
    """Resolved inputs for one simulation run."""

    graph: DirectedGraph
    problem: Problem
    algorithm: str  # "rp3" | "ppp"
    s_seq: SetSequence
    x_seq: SetSequence | None
    eta: float
    lam: float
    iterations: int
    seed: int
    trust_params: TrustModelParams | None = None
    attack: AttackModel | None = None
    observation_window: int = 0
    init: np.ndarray | None = None
    x_star: np.ndarray | None = None
    grad_bound: float | None = None
    record_trajectory: bool = False
    record_observation_log: bool = False
    early_stop_max_dev: float | None = None

    def __post_init__(self):
        if self.algorithm not in ("rp3", "ppp"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.eta <= 0 or not (0.0 < self.lam <= 1.0):
            raise ValueError("need eta > 0 and lambda in (0, 1]")


def _oracle_solution(problem: Problem) -> np.ndarray:
    if problem.kind == "consensus":
        return consensus_optimum(problem)
    return centralized_solve(problem).x_star


def _default_init(spec: RunSpec) -> np.ndarray:
    n_l = spec.graph.n_legit
    dim = spec.problem.dim
    if spec.problem.kind == "consensus":
        return np.asarray(spec.problem.extras["values"], dtype=float).reshape(n_l, dim)
    return np.zeros((n_l, dim))


def effective_constraint(problem: Problem, x_seq: SetSequence | None, k: int) -> ConstraintSet:
    if x_seq is None or isinstance(x_seq, UnboundedRadius):
        return problem.constraint
    return intersect(problem.constraint, Ball(np.zeros(problem.dim), x_seq.radius(k)))


def run(spec: RunSpec) -> RunResult:
    """Execute the full protocol loop and collect series and events.

    Per step: trust round (observations then opinions), trusted neighborhoods,
    weights, message exchange with the adversary, then the algorithm update.
    The nominal baseline skips the trust machinery entirely.
    """
    g = spec.graph
    problem = spec.problem
    n, n_l = g.n, g.n_legit
    dim = problem.dim
    legit = g.legit
    K = spec.iterations

    r_bar, c_bar = nominal_weight_matrices(g)
    phi, pi = perron_vectors(r_bar, c_bar)
    x_star = spec.x_star if spec.x_star is not None else _oracle_solution(problem)

    x0 = spec.init if spec.init is not None else _default_init(spec)
    x0 = np.asarray(x0, dtype=float).reshape(n_l, dim)

    attack = spec.attack if spec.attack is not None else NoAttack()
    attack_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, PURPOSE_ATTACK])))
    ctx = AttackContext(g=g, x_star=x_star, constraint=problem.constraint, dim=dim, rng=attack_rng)
    if g.n_malicious:
        attack.prepare(ctx)

    is_rp3 = spec.algorithm == "rp3"
    if is_rp3:
        if spec.trust_params is None:
            raise ProtocolError("resilient runs need trust parameters")
        proto = TrustProtocol(g, adversary_opinions=attack.opinion_vector(g))
        streams = ObservationStreams(g, spec.trust_params, spec.seed)
        correct = np.zeros(spec.observation_window + K, dtype=bool)
        obs_log: list | None = [] if spec.record_observation_log else None
        for w in range(spec.observation_window):
            alphas = streams.draw_all()
            if obs_log is not None:
                obs_log.extend(
                    (w, i, j, float(a)) for (i, j), a in zip(streams.pairs, alphas)
                )
            proto.step(alphas)
            correct[w] = proto.classification_correct()
        y0 = None
    else:
        proto = None
        streams = None
        correct = None
        obs_log = None
        y0 = problem.batch_grad(x0)

    variables = AgentVariables.initial(n, dim, x0, legit, y0=y0)
    if not is_rp3:
        # static full-neighborhood weights, fixed for the whole run
        in_mask = np.zeros((n_l, n), dtype=bool)
        out_mask = np.zeros((n_l, n), dtype=bool)
        for row, i in enumerate(legit):
            in_mask[row] = g.adj[:, int(i)]
            in_mask[row, int(i)] = True
            out_mask[row] = g.adj[int(i), :]
            out_mask[row, int(i)] = True
        static_weights = build_weights(g, in_mask, out_mask)

    opt = np.empty(K + 1)
    cons = np.empty(K + 1)
    track = np.empty(K + 1)
    loss = np.empty(K + 1)
    max_dev = np.empty(K + 1)
    s_norm_sum = np.empty(K + 1)
    s_active = np.zeros(K, dtype=bool)
    residuals = np.zeros(K)
    trajectory = np.empty((K + 1, n_l, dim)) if spec.record_trajectory else None

    def record(idx, variables):
        xs = variables.x[legit]
        if is_rp3:
            ys = variables.s[legit] - variables.s_prev[legit]
        else:
            ys = variables.y[legit]
        e = error_vector(xs, ys, x_star, phi, pi)
        opt[idx], cons[idx], track[idx] = e.opt, e.cons, e.track
        loss[idx] = float(problem.global_value_rows(xs).mean())
        max_dev[idx] = float(np.max(np.abs(xs - x_star[None, :])))
        s_norm_sum[idx] = float(np.linalg.norm(variables.s[legit], axis=1).sum())
        if trajectory is not None:
            trajectory[idx] = xs

    record(0, variables)
    steps_done = K
    for k in range(K):
        x_eff = effective_constraint(problem, spec.x_seq, k)
        emission = attack.emit(k, ctx) if g.n_malicious else None
        if is_rp3:
            alphas = streams.draw_all()
            if obs_log is not None:
                obs_log.extend(
                    (spec.observation_window + k, i, j, float(a))
                    for (i, j), a in zip(streams.pairs, alphas)
                )
            proto.step(alphas)
            correct[spec.observation_window + k] = proto.classification_correct()
            weights = build_weights(g, proto.trusted_in_matrix(), proto.trusted_out_matrix())
            accept = proto.trusted_in_matrix()
            z_msgs, s_msgs, _ = assemble_messages(
                variables, g, emission, x_eff, spec.s_seq, k, channels="zs")
            variables, info = rp3_step(
                variables, g, weights, accept, z_msgs, s_msgs, problem,
                spec.s_seq, x_eff, spec.eta, spec.lam, k,
                per_edge_z=emission.per_edge_z if emission else None,
                per_edge_s=emission.per_edge_s if emission else None,
            )
            s_active[k] = info.s_projection_active
            residuals[k] = info.tracking_residual
        else:
            z_msgs, _, y_msgs = assemble_messages(
                variables, g, emission, x_eff, UnboundedRadius(), k, channels="zy")
            variables = ppp_step(
                variables, g, static_weights, z_msgs, y_msgs, problem,
                x_eff, spec.eta, spec.lam,
            )
        record(k + 1, variables)
        if spec.early_stop_max_dev is not None and max_dev[k + 1] <= spec.early_stop_max_dev:
            steps_done = k + 1
            break

    if steps_done < K:
        sl = slice(0, steps_done + 1)
        opt, cons, track, loss = opt[sl], cons[sl], track[sl], loss[sl]
        max_dev, s_norm_sum = max_dev[sl], s_norm_sum[sl]
        s_active, residuals = s_active[:steps_done], residuals[:steps_done]
        if trajectory is not None:
            trajectory = trajectory[sl]
        if correct is not None:
            correct = correct[: spec.observation_window + steps_done]

    t_max_trust = t_max_from_series(correct) if correct is not None and len(correct) else None
    t_max = None
    if t_max_trust is not None:
        t_max = max(0, t_max_trust - spec.observation_window)
    first_inactive = None
    if is_rp3:
        if not s_active.any():
            first_inactive = 0
        elif not s_active[-1]:
            first_inactive = int(np.nonzero(s_active)[0][-1] + 1)

    t_nom_bound = None
    from .optim import LinearRadius

    if (
        is_rp3
        and t_max is not None
        and isinstance(spec.s_seq, LinearRadius)
        and spec.grad_bound is not None
        and spec.s_seq.theta > n_l * spec.grad_bound
    ):
        theta, G = spec.s_seq.theta, spec.grad_bound
        t_nom_bound = t_max * n_l * (theta - G) / (theta - n_l * G)

    return RunResult(
        seed=spec.seed,
        algorithm=spec.algorithm,
        opt=opt, cons=cons, track=track, loss=loss,
        max_dev=max_dev, s_norm_sum=s_norm_sum,
        s_proj_active=s_active, tracking_residual=residuals,
        x_star=x_star,
        final_x=variables.x[legit].copy(),
        correct_series=correct,
        t_max_trust=t_max_trust,
        t_max=t_max,
        first_s_inactive=first_inactive,
        t_nom_bound=t_nom_bound,
        metadata={
            "eta": spec.eta, "lam": spec.lam, "phi_min": float(phi.min()),
            "pi_min": float(pi.min()), "n_legit": n_l, "iterations_done": steps_done,
            "theta": getattr(spec.s_seq, "theta", None),
            "grad_bound": spec.grad_bound,
            "constraint_norm_bound": problem.constraint.norm_bound(),
        },
        trajectory=trajectory,
        observation_log=obs_log,
    )
