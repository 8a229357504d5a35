"""Directed communication graphs: generation, validation, and metrics.

Agents are integers 0..n-1. An edge (i, j) means agent i sends to agent j,
so j is an out-neighbor of i and i is an in-neighbor of j. Every agent must
have a self-loop. Agents are partitioned into legitimate and malicious roles;
the induced subgraph on legitimate agents must be strongly connected and every
malicious agent must be observed by at least one legitimate agent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEGITIMATE = "L"
MALICIOUS = "M"

GENERATORS = ("cycle-plus-random", "grid-with-diagonals", "erdos-renyi")


class TopologyError(Exception):
    """Raised when a requested topology cannot be generated or is invalid."""


@dataclass(frozen=True)
class DirectedGraph:
    """Fixed communication graph with a legitimate/malicious role partition.

    adj[i, j] is True iff edge (i, j) exists (i sends to j).
    """

    adj: np.ndarray
    roles: tuple[str, ...]

    def __post_init__(self):
        adj = np.asarray(self.adj, dtype=bool)
        object.__setattr__(self, "adj", adj)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be a square matrix")
        if len(self.roles) != adj.shape[0]:
            raise ValueError("roles length must match agent count")
        bad = [r for r in self.roles if r not in (LEGITIMATE, MALICIOUS)]
        if bad:
            raise ValueError(f"unknown roles: {bad}")

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    @property
    def edges(self) -> set[tuple[int, int]]:
        ii, jj = np.nonzero(self.adj)
        return set(zip(ii.tolist(), jj.tolist()))

    @property
    def legit(self) -> np.ndarray:
        """Indices of legitimate agents, ascending."""
        return np.array([i for i, r in enumerate(self.roles) if r == LEGITIMATE], dtype=int)

    @property
    def malicious(self) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.roles) if r == MALICIOUS], dtype=int)

    @property
    def n_legit(self) -> int:
        return len(self.legit)

    @property
    def n_malicious(self) -> int:
        return len(self.malicious)

    def in_neighbors(self, i: int) -> list[int]:
        return np.nonzero(self.adj[:, i])[0].tolist()

    def out_neighbors(self, i: int) -> list[int]:
        return np.nonzero(self.adj[i, :])[0].tolist()

    def nominal_subgraph(self) -> "NominalSubgraph":
        """Induced subgraph on legitimate agents with a stable reindexing."""
        keep = self.legit
        sub = self.adj[np.ix_(keep, keep)].copy()
        return NominalSubgraph(adj=sub, to_parent=keep.copy())


@dataclass(frozen=True)
class NominalSubgraph:
    """Legitimate-only subgraph; to_parent maps local index -> parent index."""

    adj: np.ndarray
    to_parent: np.ndarray

    @property
    def n(self) -> int:
        return self.adj.shape[0]


@dataclass(frozen=True)
class TopologySpec:
    """Parameters for the random topology generators.

    edge_prob drives extra legitimate-legitimate edges (cycle-plus-random,
    erdos-renyi) or diagonal inclusion (grid-with-diagonals). attach_prob is
    the per-pair probability of a malicious-legitimate edge; the grid
    generator instead wires each malicious agent to exactly one legitimate
    contact.
    """

    kind: str
    edge_prob: float = 0.0
    attach_prob: float = 0.0
    undirected: bool = True

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ValueError(f"unknown generator kind {self.kind!r}; expected one of {GENERATORS}")
        for name in ("edge_prob", "attach_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class ValidationReport:
    """Connectivity checks; a report, not an exception."""

    legit_strongly_connected: bool
    malicious_all_observed: bool
    self_loops_present: bool
    unobserved_malicious: tuple[int, ...] = ()
    missing_self_loops: tuple[int, ...] = ()

    @property
    def ok(self) -> bool:
        return (
            self.legit_strongly_connected
            and self.malicious_all_observed
            and self.self_loops_present
        )

    def failures(self) -> list[str]:
        out = []
        if not self.legit_strongly_connected:
            out.append("legitimate subgraph is not strongly connected")
        if not self.malicious_all_observed:
            out.append(
                f"malicious agents without a legitimate observer: {list(self.unobserved_malicious)}"
            )
        if not self.self_loops_present:
            out.append(f"agents missing self-loops: {list(self.missing_self_loops)}")
        return out


def _bfs_dist(adj: np.ndarray, src: int) -> np.ndarray:
    """Shortest-path hop counts from src (-1 for unreachable). Self-loops ignored."""
    n = adj.shape[0]
    dist = np.full(n, -1, dtype=int)
    dist[src] = 0
    frontier = [src]
    d = 0
    while frontier:
        d += 1
        nxt = []
        for u in frontier:
            for v in np.nonzero(adj[u])[0]:
                if v != u and dist[v] < 0:
                    dist[v] = d
                    nxt.append(int(v))
        frontier = nxt
    return dist


def _strongly_connected(adj: np.ndarray) -> bool:
    n = adj.shape[0]
    if n == 0:
        return False
    if n == 1:
        return True
    fwd = _bfs_dist(adj, 0)
    if (fwd < 0).any():
        return False
    bwd = _bfs_dist(adj.T, 0)
    return not (bwd < 0).any()


def validate_assumptions(g: DirectedGraph) -> ValidationReport:
    """Check strong connectivity of G_L, observation of malicious agents, self-loops."""
    sub = g.nominal_subgraph()
    sc = sub.n > 0 and _strongly_connected(sub.adj)

    legit_set = g.legit
    unobserved = []
    for m in g.malicious:
        # m must send to at least one legitimate agent
        if not g.adj[m, legit_set].any():
            unobserved.append(int(m))

    missing = [i for i in range(g.n) if not g.adj[i, i]]
    return ValidationReport(
        legit_strongly_connected=bool(sc),
        malicious_all_observed=not unobserved,
        self_loops_present=not missing,
        unobserved_malicious=tuple(unobserved),
        missing_self_loops=tuple(missing),
    )


def diameter(g: NominalSubgraph) -> int:
    """Max over ordered pairs of BFS shortest-path length; 0 for a single agent."""
    n = g.n
    if n == 1:
        return 0
    best = 0
    for s in range(n):
        dist = _bfs_dist(g.adj, s)
        if (dist < 0).any():
            raise TopologyError("diameter undefined: subgraph not strongly connected")
        best = max(best, int(dist.max()))
    return best


def max_edge_utility(g: NominalSubgraph) -> int:
    """Max, over edges, of the number of fixed shortest paths using that edge.

    One shortest path is fixed per ordered pair by BFS with a deterministic
    tie-break: each node's predecessor is the lowest-index in-neighbor on a
    shortest path. Self-loops never appear on shortest paths.
    """
    n = g.n
    if n == 1:
        return 0
    counts: dict[tuple[int, int], int] = {}
    for s in range(n):
        dist = _bfs_dist(g.adj, s)
        if (dist < 0).any():
            raise TopologyError("edge utility undefined: subgraph not strongly connected")
        # Predecessor of v: lowest-index u with dist[u] = dist[v]-1 and edge u->v.
        pred = np.full(n, -1, dtype=int)
        for v in range(n):
            if v == s:
                continue
            for u in range(n):
                if u != v and g.adj[u, v] and dist[u] == dist[v] - 1:
                    pred[v] = u
                    break
        for t in range(n):
            if t == s:
                continue
            v = t
            while v != s:
                u = int(pred[v])
                counts[(u, v)] = counts.get((u, v), 0) + 1
                v = u
    return max(counts.values())


def generate_topology(
    spec: TopologySpec,
    n_legit: int,
    n_malicious: int,
    rng: np.random.Generator,
    max_retries: int = 1000,
) -> DirectedGraph:
    """Generate a graph satisfying validate_assumptions, retrying up to max_retries.

    Legitimate agents take indices 0..n_legit-1, malicious the rest.
    """
    if n_legit < 2:
        raise ValueError("need at least 2 legitimate agents")
    for _ in range(max_retries):
        g = _generate_once(spec, n_legit, n_malicious, rng)
        report = validate_assumptions(g)
        if report.ok:
            return g
    raise TopologyError(
        f"could not generate a valid topology in {max_retries} attempts; "
        f"last failures: {report.failures()}"
    )


def _generate_once(spec: TopologySpec, n_l: int, n_m: int, rng: np.random.Generator) -> DirectedGraph:
    n = n_l + n_m
    adj = np.zeros((n, n), dtype=bool)
    np.fill_diagonal(adj, True)

    if spec.kind == "cycle-plus-random":
        for i in range(n_l):
            j = (i + 1) % n_l
            adj[i, j] = True
            if spec.undirected:
                adj[j, i] = True
        # extra random edges among legitimate agents
        for i in range(n_l):
            for j in range(i + 1, n_l):
                if rng.random() < spec.edge_prob:
                    adj[i, j] = True
                    if spec.undirected:
                        adj[j, i] = True
                elif not spec.undirected and rng.random() < spec.edge_prob:
                    adj[j, i] = True
        _attach_malicious(adj, n_l, n_m, spec, rng)

    elif spec.kind == "grid-with-diagonals":
        side = int(round(n_l**0.5))
        if side * side != n_l:
            raise ValueError(f"grid generator needs a square legitimate count, got {n_l}")
        def node(r, c):
            return r * side + c
        for r in range(side):
            for c in range(side):
                u = node(r, c)
                if c + 1 < side:
                    _undirected_edge(adj, u, node(r, c + 1))
                if r + 1 < side:
                    _undirected_edge(adj, u, node(r + 1, c))
                # diagonals included at random
                if r + 1 < side and c + 1 < side and rng.random() < spec.edge_prob:
                    _undirected_edge(adj, u, node(r + 1, c + 1))
                if r + 1 < side and c - 1 >= 0 and rng.random() < spec.edge_prob:
                    _undirected_edge(adj, u, node(r + 1, c - 1))
        # each malicious agent contacts exactly one legitimate agent
        for m in range(n_l, n):
            target = int(rng.integers(0, n_l))
            _undirected_edge(adj, m, target)

    else:  # erdos-renyi
        for i in range(n_l):
            for j in range(n_l):
                if i == j:
                    continue
                if spec.undirected:
                    if j > i and rng.random() < spec.edge_prob:
                        _undirected_edge(adj, i, j)
                elif rng.random() < spec.edge_prob:
                    adj[i, j] = True
        _attach_malicious(adj, n_l, n_m, spec, rng)

    roles = tuple([LEGITIMATE] * n_l + [MALICIOUS] * n_m)
    return DirectedGraph(adj=adj, roles=roles)


def _undirected_edge(adj: np.ndarray, u: int, v: int) -> None:
    adj[u, v] = True
    adj[v, u] = True


def _attach_malicious(
    adj: np.ndarray, n_l: int, n_m: int, spec: TopologySpec, rng: np.random.Generator
) -> None:
    n = n_l + n_m
    for m in range(n_l, n):
        for l in range(n_l):
            if spec.undirected:
                if rng.random() < spec.attach_prob:
                    _undirected_edge(adj, m, l)
            else:
                if rng.random() < spec.attach_prob:
                    adj[m, l] = True
                if rng.random() < spec.attach_prob:
                    adj[l, m] = True


def save_graph_file(g: DirectedGraph, path) -> None:
    """Serialize as a roles header line plus one `i j` edge per line."""
    lines = ["roles " + " ".join(g.roles)]
    for i, j in sorted(g.edges):
        lines.append(f"{i} {j}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_graph_file(path) -> DirectedGraph:
    roles: tuple[str, ...] | None = None
    pairs: list[tuple[int, int]] = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("roles"):
                roles = tuple(line.split()[1:])
                continue
            i, j = line.split()
            pairs.append((int(i), int(j)))
    if roles is None:
        raise ValueError(f"{path}: missing roles header line")
    n = len(roles)
    adj = np.zeros((n, n), dtype=bool)
    for i, j in pairs:
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"{path}: edge ({i}, {j}) out of range for {n} agents")
        adj[i, j] = True
    return DirectedGraph(adj=adj, roles=roles)
