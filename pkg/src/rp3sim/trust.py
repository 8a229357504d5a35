"""Stochastic trust observations, opinion propagation, and learning-time bounds.

Each legitimate receiver i accumulates beta[i, j] = sum_t (alpha_ij[t] - 1/2)
over the observations from in-neighbor j; the sign of beta drives the direct
trust indicator, and opinions about non-neighbors are averaged over trusted
in-neighbors' previous opinion vectors. Self trust is pinned: beta[i, i] = 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .graph import DirectedGraph

logger = logging.getLogger(__name__)

TRUST_THRESHOLD = 0.5


@dataclass(frozen=True)
class UniformDist:
    lo: float
    hi: float

    def __post_init__(self):
        if not (0.0 <= self.lo <= self.hi <= 1.0):
            raise ValueError("uniform support must satisfy 0 <= lo <= hi <= 1")

    @property
    def mean(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.uniform(self.lo, self.hi, size=size)


@dataclass(frozen=True)
class PointDist:
    v: float

    def __post_init__(self):
        if not 0.0 <= self.v <= 1.0:
            raise ValueError("point mass must lie in [0, 1]")

    @property
    def mean(self) -> float:
        return self.v

    def sample(self, rng: np.random.Generator, size=None):
        if size is None:
            return self.v
        return np.full(size, self.v)


@dataclass(frozen=True)
class TrustModelParams:
    """Observation distributions for legitimate and malicious senders.

    The expectation gaps E_L = mean(legit) - 1/2 and E_M = mean(malicious) - 1/2
    must be strictly positive and strictly negative, respectively.
    """

    legit: UniformDist | PointDist
    malicious: UniformDist | PointDist

    def __post_init__(self):
        if self.e_legit <= 0:
            raise ValueError(f"legit observation mean must exceed 1/2 (E_L={self.e_legit})")
        if self.e_malicious >= 0:
            raise ValueError(f"malicious observation mean must be below 1/2 (E_M={self.e_malicious})")

    @property
    def e_legit(self) -> float:
        return self.legit.mean - 0.5

    @property
    def e_malicious(self) -> float:
        return self.malicious.mean - 0.5


def paper_trust_params() -> TrustModelParams:
    """The uniform [0.35, 0.75] / [0.25, 0.65] observation model."""
    return TrustModelParams(legit=UniformDist(0.35, 0.75), malicious=UniformDist(0.25, 0.65))


def sample_observation(params: TrustModelParams, sender_role: str, rng: np.random.Generator) -> float:
    dist = params.legit if sender_role == "L" else params.malicious
    return float(dist.sample(rng))


@dataclass(frozen=True)
class TrustState:
    """Aggregate trust values and opinion vectors for the legitimate agents.

    beta is aligned with `pairs` (observer, in-neighbor) with observer
    legitimate and in-neighbor != observer. opinions has one row per
    legitimate agent (ordered as graph.legit) over all n agents.
    """

    pairs: tuple[tuple[int, int], ...]
    beta: np.ndarray
    opinions: np.ndarray
    pair_index: Mapping[tuple[int, int], int] = field(repr=False, hash=False, compare=False, default=None)

    @staticmethod
    def initial(g: DirectedGraph) -> "TrustState":
        pairs = []
        for i in g.legit:
            for j in g.in_neighbors(int(i)):
                if j != i:
                    pairs.append((int(i), int(j)))
        pairs = tuple(pairs)
        beta = np.zeros(len(pairs))
        # everyone starts trusted: indicator at beta=0 for in-neighbors,
        # 1/2 (the trust threshold) for everyone else
        opinions = np.full((g.n_legit, g.n), TRUST_THRESHOLD)
        for row, i in enumerate(g.legit):
            opinions[row, i] = 1.0
            for j in g.in_neighbors(int(i)):
                opinions[row, j] = 1.0
        return TrustState(
            pairs=pairs,
            beta=beta,
            opinions=opinions,
            pair_index={p: t for t, p in enumerate(pairs)},
        )

    def __post_init__(self):
        if self.pair_index is None:
            object.__setattr__(self, "pair_index", {p: t for t, p in enumerate(self.pairs)})

    def beta_of(self, i: int, j: int) -> float:
        if i == j:
            return 1.0  # self trust is pinned
        return float(self.beta[self.pair_index[(i, j)]])


def update_aggregates(state: TrustState, observations: Mapping[tuple[int, int], float]) -> TrustState:
    """beta[i, j] += alpha - 1/2 for each observed pair; others unchanged."""
    beta = state.beta.copy()
    for (i, j), alpha in observations.items():
        if (i, j) not in state.pair_index:
            raise KeyError(f"observation for non-edge pair ({i}, {j})")
        beta[state.pair_index[(i, j)]] += alpha - 0.5
    return replace(state, beta=beta)


def update_opinions(
    state: TrustState,
    g: DirectedGraph,
    received: Mapping[int, np.ndarray],
) -> TrustState:
    """One opinion round for every legitimate agent.

    For in-neighbors j the opinion is the indicator 1{beta_ij >= 0}; the
    trusted in-neighborhood is formed from those indicators (plus self); for
    every other agent q the opinion is the average of the trusted in-neighbors'
    received previous-round opinions about q. Received entries outside [0, 1]
    are clamped (sanitizing receiver).
    """
    n = g.n
    legit = g.legit
    cleaned: dict[int, np.ndarray] = {}
    clamped = 0
    for j, vec in received.items():
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (n,):
            raise ValueError(f"opinion vector from {j} has shape {vec.shape}, want ({n},)")
        bad = (vec < 0.0) | (vec > 1.0)
        if bad.any():
            clamped += int(bad.sum())
            vec = np.clip(vec, 0.0, 1.0)
        cleaned[j] = vec
    if clamped:
        logger.debug("clamped %d out-of-range opinion entries", clamped)

    new_ops = np.empty_like(state.opinions)
    for row, i in enumerate(legit):
        i = int(i)
        in_nbrs = g.in_neighbors(i)
        missing = [j for j in in_nbrs if j not in cleaned]
        if missing:
            raise KeyError(f"missing opinion vectors from in-neighbors {missing} of agent {i}")
        indicator = {j: (1.0 if state.beta_of(i, j) >= 0.0 else 0.0) for j in in_nbrs}
        trusted = [j for j in in_nbrs if indicator[j] >= TRUST_THRESHOLD]
        avg = np.zeros(n)
        for j in trusted:
            avg += cleaned[j]
        avg /= len(trusted)
        new_ops[row] = avg
        for j in in_nbrs:
            new_ops[row, j] = indicator[j]
    return replace(state, opinions=new_ops)


def trusted_neighborhoods(state: TrustState, g: DirectedGraph, i: int) -> tuple[set[int], set[int]]:
    """Trusted in- and out-neighborhoods of legitimate agent i; both contain i."""
    legit_rows = {int(a): r for r, a in enumerate(g.legit)}
    if i not in legit_rows:
        raise ValueError(f"agent {i} is not legitimate")
    row = legit_rows[i]
    n_in = {j for j in g.in_neighbors(i) if state.opinions[row, j] >= TRUST_THRESHOLD}
    n_out = {j for j in g.out_neighbors(i) if state.opinions[row, j] >= TRUST_THRESHOLD}
    n_in.add(i)
    n_out.add(i)
    return n_in, n_out


# ---------------------------------------------------------------------------
# learning-time bounds


def _exp(x: float) -> float:
    """exp saturating to +inf instead of overflowing (bounds take min(., 1))."""
    return math.inf if x > 700.0 else math.exp(x)


@dataclass(frozen=True)
class LearningBounds:
    """Graph-dependent constants for the misclassification tail bounds.

    n_pairs_legit counts (legitimate observer, legitimate in-neighbor) pairs,
    n_pairs_malicious the (legitimate observer, malicious in-neighbor) pairs;
    self-loops are excluded since self trust is pinned. d_max is the maximum
    legitimate in-degree in the full graph (self-loop included) and diam is
    the diameter of the legitimate subgraph.
    """

    n_pairs_legit: int
    n_pairs_malicious: int
    d_max: int
    diam: int

    @staticmethod
    def from_graph(g: DirectedGraph) -> "LearningBounds":
        from .graph import diameter as graph_diameter

        legit = set(int(a) for a in g.legit)
        nl = nm = 0
        d_max = 0
        for i in legit:
            nbrs = g.in_neighbors(i)
            d_max = max(d_max, len(nbrs))
            for j in nbrs:
                if j == i:
                    continue
                if j in legit:
                    nl += 1
                else:
                    nm += 1
        diam = graph_diameter(g.nominal_subgraph())
        return LearningBounds(n_pairs_legit=nl, n_pairs_malicious=nm, d_max=d_max, diam=diam)

    @property
    def h(self) -> float:
        if self.d_max < 2 or self.diam == 0:
            return 0.0
        ratio = 1.0 - (1.0 / self.d_max) ** self.diam
        return 1.0 / math.log2(1.0 / ratio)

    @property
    def delta(self) -> float:
        """Learning delay h * D(G_L) + 1."""
        return self.h * self.diam + 1.0


def delta(g: "DirectedGraph") -> float:
    """Learning delay h * D(G_L) + 1 computed straight from a graph."""
    return LearningBounds.from_graph(g).delta


def p_c(k: float, b: LearningBounds, params: TrustModelParams, second_coefficient: str = "NL") -> float:
    """Bound on the probability that some pair is misclassified at step k.

    The literal formula scales both exponential terms by the legitimate pair
    count; second_coefficient="NM" switches the malicious term to the
    malicious pair count. Callers apply min(., 1).
    """
    el, em = params.e_legit, params.e_malicious
    if el == 0.0 or em == 0.0:
        raise ValueError("expectation gaps must be nonzero")
    if second_coefficient == "NL":
        c2 = b.n_pairs_legit
    elif second_coefficient == "NM":
        c2 = b.n_pairs_malicious
    else:
        raise ValueError("second_coefficient must be 'NL' or 'NM'")
    return b.n_pairs_legit * _exp(-2.0 * k * el * el) + c2 * _exp(-2.0 * k * em * em)


def p_e(k: float, b: LearningBounds, params: TrustModelParams) -> float:
    """Bound on Pr(T_max > k - 1) before the min with 1. Callers apply min(., 1)."""
    el, em = params.e_legit, params.e_malicious
    if el == 0.0 or em == 0.0:
        raise ValueError("expectation gaps must be nonzero")
    dl = 1.0 - math.exp(-2.0 * el * el)
    dm = 1.0 - math.exp(-2.0 * em * em)
    return (
        b.n_pairs_legit * _exp(-2.0 * k * el * el) / dl
        + b.n_pairs_malicious * _exp(-2.0 * k * em * em) / dm
    )


def t_max_tail(k: float, b: LearningBounds, params: TrustModelParams) -> float:
    """min{p_e(k - delta), 1}, the bound on Pr(T_max > k - 1)."""
    return min(p_e(k - b.delta, b, params), 1.0)


def t_nom_tail(
    k: float,
    theta: float,
    n_legit: int,
    grad_bound: float,
    b: LearningBounds,
    params: TrustModelParams,
) -> float:
    """Tail bound for the projection-identity time with linear tracking sets.

    Requires theta > n_legit * grad_bound. Returns
    min{p_e(((theta - n_L G)/(n_L (theta - G))) * k - delta), 1}.
    """
    if theta <= n_legit * grad_bound:
        raise ValueError(f"need theta > n_L * G, got theta={theta}, n_L*G={n_legit * grad_bound}")
    coeff = (theta - n_legit * grad_bound) / (n_legit * (theta - grad_bound))
    return min(p_e(coeff * k - b.delta, b, params), 1.0)


def delta_exp(theta1: float, theta2: float, n_legit: int, lip: float, grad0_max: float, b: LearningBounds) -> float:
    """delta_T = delta + ln(A)/(theta2 - theta1) with A = 2 n_L (L + max||grad f(0)||)^2 / (e^theta1 - 1)."""
    if not (theta2 > theta1 > 0):
        raise ValueError("need theta2 > theta1 > 0")
    a = 2.0 * n_legit * (lip + grad0_max) ** 2 / (math.exp(theta1) - 1.0)
    return b.delta + math.log(a) / (theta2 - theta1)


def t_nom_tail_exp(
    k: float,
    theta1: float,
    theta2: float,
    n_legit: int,
    lip: float,
    grad0_max: float,
    b: LearningBounds,
    params: TrustModelParams,
) -> float:
    """Tail bound with exponential sets: min{p_e(k + 1 - delta_T), 1}."""
    dt = delta_exp(theta1, theta2, n_legit, lip, grad0_max, b)
    return min(p_e(k + 1.0 - dt, b, params), 1.0)


def t_nom_unbounded(
    t_max: float,
    theta1: float,
    theta2: float,
    n_legit: int,
    lip: float,
    grad0_max: float,
    x_star_norm: float,
) -> float:
    """Nominal-behavior time with exponential sets:
    max{T_max + ln(2 n_L)/theta2, ln(A)/(theta2 - theta1), ln||x*||/theta1}."""
    if not (theta2 > theta1 > 0):
        raise ValueError("need theta2 > theta1 > 0")
    a = 2.0 * n_legit * (lip + grad0_max) ** 2 / (math.exp(theta1) - 1.0)
    terms = [t_max + math.log(2.0 * n_legit) / theta2, math.log(a) / (theta2 - theta1)]
    if x_star_norm > 0:
        terms.append(math.log(x_star_norm) / theta1)
    return max(terms)


def rth_mean_rate_condition(r: float, theta2: float, params: TrustModelParams) -> bool:
    """Growth-rate condition for convergence in the r-th mean:
    r * theta2 < min{2 E_L^2, 2 E_M^2}."""
    if r < 1:
        raise ValueError("need r >= 1")
    return r * theta2 < min(2.0 * params.e_legit**2, 2.0 * params.e_malicious**2)


# ---------------------------------------------------------------------------
# vectorized protocol driver (consistent with the pure update functions)


def default_adversary_opinions(g: DirectedGraph) -> np.ndarray:
    """Maximally misleading lie: report 1 for malicious agents, 0 for legitimate."""
    lie = np.zeros(g.n)
    lie[g.malicious] = 1.0
    return lie


class TrustProtocol:
    """Array-based driver for the trust protocol over a fixed graph.

    Maintains the same state as the pure functions (verified in tests) but
    updates all legitimate agents at once. Malicious senders broadcast a
    fixed lie vector as their opinions.
    """

    def __init__(self, g: DirectedGraph, adversary_opinions: np.ndarray | None = None):
        self.g = g
        n = g.n
        legit = g.legit
        self.n_legit = len(legit)
        self.legit = legit
        self.in_mask = np.zeros((self.n_legit, n), dtype=bool)
        for row, i in enumerate(legit):
            self.in_mask[row, g.adj[:, int(i)]] = True
            self.in_mask[row, int(i)] = True
        self.out_mask = np.zeros((self.n_legit, n), dtype=bool)
        for row, i in enumerate(legit):
            self.out_mask[row, g.adj[int(i), :]] = True
            self.out_mask[row, int(i)] = True
        state = TrustState.initial(g)
        self.pairs = state.pairs
        self.beta = state.beta.copy()
        self._pair_rows = np.array(
            [int(np.searchsorted(legit, i)) for i, _ in self.pairs], dtype=int
        )
        self._pair_cols = np.array([j for _, j in self.pairs], dtype=int)
        self.opinions = state.opinions.copy()
        self._o_full = np.full((n, n), TRUST_THRESHOLD)
        lie = default_adversary_opinions(g) if adversary_opinions is None else np.clip(adversary_opinions, 0.0, 1.0)
        self._lie = lie
        self._o_full[legit] = self.opinions
        for m in g.malicious:
            self._o_full[m] = lie
        self._is_legit_col = np.zeros(n, dtype=bool)
        self._is_legit_col[legit] = True

    def step(self, alphas: np.ndarray) -> None:
        """Absorb one round of observations (aligned with self.pairs), then
        run one opinion round."""
        self.beta += alphas - 0.5
        ind = np.zeros_like(self.opinions)
        ind[self._pair_rows, self._pair_cols] = (self.beta >= 0.0).astype(float)
        ind[np.arange(self.n_legit), self.legit] = 1.0  # self trust pinned
        trusted_in = self.in_mask & (ind >= TRUST_THRESHOLD)
        weights = trusted_in / trusted_in.sum(axis=1, keepdims=True)
        prop = weights @ self._o_full
        self.opinions = np.where(self.in_mask, ind, prop)
        self._o_full[self.legit] = self.opinions

    def classification_correct(self) -> bool:
        """True iff every legitimate agent classifies every agent correctly."""
        verdicts = self.opinions >= TRUST_THRESHOLD
        return bool((verdicts == self._is_legit_col[None, :]).all())

    def trusted_in_matrix(self) -> np.ndarray:
        """(n_legit, n) bool: receiver row trusts sender column as in-neighbor."""
        return self.in_mask & (self.opinions >= TRUST_THRESHOLD)

    def trusted_out_matrix(self) -> np.ndarray:
        return self.out_mask & (self.opinions >= TRUST_THRESHOLD)

    def as_state(self) -> TrustState:
        return TrustState(pairs=self.pairs, beta=self.beta.copy(), opinions=self.opinions.copy())


def simulate_learning(
    g: DirectedGraph,
    params: TrustModelParams,
    seed: int,
    horizon: int,
    adversary_opinions: np.ndarray | None = None,
) -> tuple[int | None, np.ndarray]:
    """Run the trust protocol alone for `horizon` rounds.

    Returns (t_max, correct_series) where t_max is the first round after which
    classification stayed correct through the horizon (None if never stable).
    """
    proto = TrustProtocol(g, adversary_opinions)
    streams = ObservationStreams(g, params, seed)
    correct = np.zeros(horizon, dtype=bool)
    for k in range(horizon):
        proto.step(streams.draw_all())
        correct[k] = proto.classification_correct()
    return t_max_from_series(correct), correct


def t_max_from_series(correct: np.ndarray) -> int | None:
    """First index after which the series is all True (None if it never is)."""
    if not correct[-1]:
        return None
    wrong = np.nonzero(~correct)[0]
    return int(wrong[-1] + 1) if len(wrong) else 0


# ---------------------------------------------------------------------------
# per-pair observation streams (reproducible regardless of scheduling)

PURPOSE_TRUST = 101


class ObservationStreams:
    """One RNG stream per ordered (observer, in-neighbor) pair.

    Stream (i, j) is seeded by SeedSequence([seed, PURPOSE_TRUST, i, j]) so a
    pair's alpha sequence does not depend on the other pairs or on scheduling.
    Draws are chunked for speed; draw_all(k) returns the alpha vector for all
    pairs at one step, i.i.d. across steps.
    """

    def __init__(self, g: DirectedGraph, params: TrustModelParams, seed: int, chunk: int = 512):
        self.pairs: list[tuple[int, int]] = []
        for i in g.legit:
            for j in g.in_neighbors(int(i)):
                if j != i:
                    self.pairs.append((int(i), int(j)))
        roles = g.roles
        self._dists = [params.legit if roles[j] == "L" else params.malicious for _, j in self.pairs]
        self._gens = [
            np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, PURPOSE_TRUST, i, j])))
            for i, j in self.pairs
        ]
        self._chunk = chunk
        self._buf = np.empty((len(self.pairs), chunk))
        self._pos = chunk  # force refill on first draw

    def _refill(self):
        for t, (gen, dist) in enumerate(zip(self._gens, self._dists)):
            self._buf[t] = dist.sample(gen, size=self._chunk)
        self._pos = 0

    def draw_all(self) -> np.ndarray:
        if self._pos >= self._chunk:
            self._refill()
        col = self._buf[:, self._pos].copy()
        self._pos += 1
        return col
