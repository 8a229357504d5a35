"""Concrete optimization problems with centralized oracles.

Every problem exposes per-agent quadratic costs (value and gradient in closed
form), aggregate strong-convexity and smoothness constants taken over agents,
a vectorized gradient for the engine hot path, and a centralized solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .optim import AllSpace, ConstraintSet, CostFunction


class SolveError(Exception):
    pass


@dataclass(frozen=True)
class CentralizedSolution:
    x_star: np.ndarray
    f_star: float
    method: str
    residual: float


@dataclass(frozen=True)
class Problem:
    """Bundle of per-agent costs over a shared constraint set.

    Per-agent costs are quadratic: f_i(x) = 0.5 x'H_i x + g0_i'x + c_i, stored
    stacked. mu and lip are the extremes over agents, so Assumption-style
    per-agent certification holds for every cost.
    """

    hessians: np.ndarray  # (n, d, d)
    grad0: np.ndarray  # (n, d): gradient of f_i at 0
    offsets: np.ndarray  # (n,)
    constraint: ConstraintSet
    mu: float
    lip: float
    kind: str = "quadratic"
    extras: dict = field(default_factory=dict, hash=False, compare=False)

    def __post_init__(self):
        # cache the averaged quadratic for the global-objective hot path
        object.__setattr__(self, "_h_mean", self.hessians.mean(axis=0))
        object.__setattr__(self, "_g_mean", self.grad0.mean(axis=0))
        object.__setattr__(self, "_c_mean", float(self.offsets.mean()))

    @property
    def n_agents(self) -> int:
        return self.hessians.shape[0]

    @property
    def dim(self) -> int:
        return self.hessians.shape[1]

    def value(self, i: int, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.hessians[i] @ x + self.grad0[i] @ x + self.offsets[i])

    def grad(self, i: int, x: np.ndarray) -> np.ndarray:
        return self.hessians[i] @ np.asarray(x, dtype=float) + self.grad0[i]

    def batch_grad(self, x_stack: np.ndarray) -> np.ndarray:
        """Gradient of f_i at x_stack[i] for all agents at once."""
        return np.einsum("nij,nj->ni", self.hessians, x_stack) + self.grad0

    def global_value(self, x: np.ndarray) -> float:
        """(1/n) sum_i f_i(x)."""
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self._h_mean @ x + self._g_mean @ x + self._c_mean)

    def global_value_rows(self, xs: np.ndarray) -> np.ndarray:
        """Global objective evaluated at each row of xs in one shot."""
        xs = np.asarray(xs, dtype=float)
        quad = 0.5 * np.einsum("ni,ij,nj->n", xs, self._h_mean, xs)
        return quad + xs @ self._g_mean + self._c_mean

    def global_grad(self, x: np.ndarray) -> np.ndarray:
        return self._h_mean @ np.asarray(x, dtype=float) + self._g_mean

    def cost_functions(self) -> list[CostFunction]:
        out = []
        for i in range(self.n_agents):
            h = self.hessians[i]
            out.append(
                CostFunction(
                    value=lambda x, i=i: self.value(i, x),
                    grad=lambda x, i=i: self.grad(i, x),
                    mu=self.mu,
                    lip=self.lip,
                    dim=self.dim,
                    hess_norm=float(_sym_extreme_eigs(h)[1]),
                    grad_at_zero=self.grad0[i].copy(),
                )
            )
        return out

    def grad0_max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.grad0, axis=1)))


def _sym_extreme_eigs(h: np.ndarray, tol: float = 1e-12, max_iter: int = 50_000) -> tuple[float, float]:
    """(lambda_min, lambda_max) of a symmetric PSD matrix by power iteration."""
    h = np.asarray(h, dtype=float)
    n = h.shape[0]
    if n == 1:
        v = float(h[0, 0])
        return v, v

    def dominant(mat):
        x = np.full(n, 1.0 / math.sqrt(n))
        x[0] += 1e-3
        x /= np.linalg.norm(x)
        lam = 0.0
        for _ in range(max_iter):
            y = mat @ x
            ny = np.linalg.norm(y)
            if ny == 0.0:
                return 0.0
            x_new = y / ny
            lam = float(x_new @ mat @ x_new)
            if np.linalg.norm(mat @ x_new - lam * x_new) <= tol * max(1.0, abs(lam)):
                return lam
            x = x_new
        return lam

    lam_max = dominant(h)
    # smallest eigenvalue via the spectral shift lam_max*I - H
    lam_min = lam_max - dominant(lam_max * np.eye(n) - h)
    return lam_min, lam_max


# ---------------------------------------------------------------------------
# consensus


def consensus_problem(values: np.ndarray, constraint: ConstraintSet | None = None) -> Problem:
    """Average consensus: f_i(x) = ||x - a_i||^2 with optimum at the clamped mean."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]  # scalars, one per agent
    n, d = values.shape
    if n == 0:
        raise ValueError("need at least one value")
    constraint = constraint if constraint is not None else AllSpace()
    hessians = np.tile(2.0 * np.eye(d), (n, 1, 1))
    grad0 = -2.0 * values
    offsets = np.sum(values * values, axis=1)
    mean = values.mean(axis=0)
    x_star = constraint.project(mean)
    prob = Problem(
        hessians=hessians,
        grad0=grad0,
        offsets=offsets,
        constraint=constraint,
        mu=2.0,
        lip=2.0,
        kind="consensus",
        extras={"values": values, "mean": mean, "x_star": x_star},
    )
    return prob


def consensus_optimum(prob: Problem) -> np.ndarray:
    """Exact optimum: projection of the unconstrained mean (valid for any convex set)."""
    return np.asarray(prob.extras["x_star"], dtype=float)


# ---------------------------------------------------------------------------
# random strongly convex quadratics


def random_quadratic_problem(
    n: int,
    dim: int,
    rng: np.random.Generator,
    mu_range: tuple[float, float] = (0.5, 1.0),
    lip_range: tuple[float, float] = (1.5, 3.0),
    center_scale: float = 2.0,
    constraint: ConstraintSet | None = None,
) -> Problem:
    """f_i(x) = 0.5 (x - b_i)' H_i (x - b_i) with controlled eigenvalue ranges."""
    hessians = np.empty((n, dim, dim))
    grad0 = np.empty((n, dim))
    offsets = np.empty(n)
    mus, lips = [], []
    for i in range(n):
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        lo = rng.uniform(*mu_range)
        hi = rng.uniform(*lip_range)
        eigs = np.sort(rng.uniform(lo, hi, size=dim))
        eigs[0], eigs[-1] = lo, hi
        h = q @ np.diag(eigs) @ q.T
        h = 0.5 * (h + h.T)
        b = rng.uniform(-center_scale, center_scale, size=dim)
        hessians[i] = h
        grad0[i] = -h @ b
        offsets[i] = 0.5 * b @ h @ b
        emin, emax = _sym_extreme_eigs(h)
        mus.append(emin)
        lips.append(emax)
    return Problem(
        hessians=hessians,
        grad0=grad0,
        offsets=offsets,
        constraint=constraint if constraint is not None else AllSpace(),
        mu=float(min(mus)),
        lip=float(max(lips)),
        kind="quadratic",
    )


# ---------------------------------------------------------------------------
# multi-robot target tracking


@dataclass(frozen=True)
class TrackingSpec:
    """Planar target with position/velocity state and noisy position observers.

    The decision variable stacks the states x_0..x_{T-1} (dimension 4T) and the
    dynamics penalty couples consecutive pairs t = 0..T-2. The default motion
    model is the unit-step double integrator. observation_radius limits which
    steps a robot observes (inf = all steps).
    """

    horizon: int = 10
    n_robots: int = 9
    process_noise: float = 0.01
    obs_noise: float = 0.1
    prior_mean: tuple[float, float, float, float] = (0.0, 0.0, 1.0, 1.0)
    prior_cov: float = 1.0
    observation_radius: float = math.inf
    robot_spacing: float = 4.0

    @property
    def dim(self) -> int:
        return 4 * self.horizon


def _dynamics_matrix() -> np.ndarray:
    a = np.eye(4)
    a[0, 2] = 1.0
    a[1, 3] = 1.0
    return a


def _robot_positions(spec: TrackingSpec) -> np.ndarray:
    side = int(math.ceil(math.sqrt(spec.n_robots)))
    pts = []
    for idx in range(spec.n_robots):
        r, c = divmod(idx, side)
        pts.append((c * spec.robot_spacing, r * spec.robot_spacing))
    return np.asarray(pts, dtype=float)


def simulate_target(spec: TrackingSpec, rng: np.random.Generator):
    """Roll the linear dynamics and collect per-robot position observations.

    Returns (truth, observations) where truth is (T, 4) and observations maps
    robot -> {t: observed 2-vector} for the steps within observation range.
    """
    a = _dynamics_matrix()
    t_steps = spec.horizon
    truth = np.empty((t_steps, 4))
    x0 = np.asarray(spec.prior_mean, dtype=float)
    if spec.prior_cov > 0:
        x0 = x0 + rng.normal(scale=math.sqrt(spec.prior_cov), size=4)
    truth[0] = x0
    for t in range(t_steps - 1):
        w = rng.normal(scale=math.sqrt(spec.process_noise), size=4) if spec.process_noise > 0 else 0.0
        truth[t + 1] = a @ truth[t] + w
    positions = _robot_positions(spec)
    observations: dict[int, dict[int, np.ndarray]] = {}
    for i in range(spec.n_robots):
        obs = {}
        for t in range(t_steps):
            if np.linalg.norm(truth[t, :2] - positions[i]) <= spec.observation_radius:
                noise = rng.normal(scale=math.sqrt(spec.obs_noise), size=2) if spec.obs_noise > 0 else 0.0
                obs[t] = truth[t, :2] + noise
        observations[i] = obs
    return truth, observations


def tracking_costs(spec: TrackingSpec, truth: np.ndarray, observations) -> Problem:
    """Per-robot trajectory-estimation quadratics plus the shared smoothing terms.

    The prior and dynamics terms are scaled by 1/N with N the robot count, so
    the robot costs sum to exactly one copy of the shared terms plus all
    observation terms.
    """
    n = spec.n_robots
    t_steps = spec.horizon
    d = spec.dim
    a = _dynamics_matrix()
    if spec.prior_cov <= 0 or spec.process_noise <= 0 or spec.obs_noise <= 0:
        raise ValueError("covariances must be symmetric positive definite")
    p0_inv = np.eye(4) / spec.prior_cov
    q_inv = np.eye(4) / spec.process_noise
    r_inv = np.eye(2) / spec.obs_noise

    def block(mat, H, t_row, t_col):
        H[4 * t_row : 4 * t_row + 4, 4 * t_col : 4 * t_col + 4] += mat

    # shared prior + dynamics quadratic: x'Sx - 2 b'x + c
    shared_h = np.zeros((d, d))
    shared_g = np.zeros(d)
    shared_c = 0.0
    block(p0_inv, shared_h, 0, 0)
    x_bar = np.asarray(spec.prior_mean, dtype=float)
    shared_g[:4] += -2.0 * p0_inv @ x_bar
    shared_c += float(x_bar @ p0_inv @ x_bar)
    for t in range(t_steps - 1):
        # ||x_{t+1} - A x_t||^2_{Qinv}
        block(a.T @ q_inv @ a, shared_h, t, t)
        block(q_inv, shared_h, t + 1, t + 1)
        cross = -(a.T @ q_inv)
        shared_h[4 * t : 4 * t + 4, 4 * (t + 1) : 4 * (t + 1) + 4] += cross
        shared_h[4 * (t + 1) : 4 * (t + 1) + 4, 4 * t : 4 * t + 4] += cross.T

    sel = np.zeros((2, 4))
    sel[0, 0] = sel[1, 1] = 1.0

    hessians = np.empty((n, d, d))
    grad0 = np.empty((n, d))
    offsets = np.empty(n)
    for i in range(n):
        h = shared_h / n
        g = shared_g / n
        c = shared_c / n
        for t, y in observations[i].items():
            h[4 * t : 4 * t + 4, 4 * t : 4 * t + 4] += sel.T @ r_inv @ sel
            g[4 * t : 4 * t + 4] += -2.0 * sel.T @ r_inv @ y
            c += float(y @ r_inv @ y)
        # stored form is 0.5 x'Hx + g0'x + c0 so double the quadratic form
        hessians[i] = h + h.T  # 2 * h, kept symmetric
        grad0[i] = g
        offsets[i] = c
    mus, lips = zip(*(_sym_extreme_eigs(hessians[i]) for i in range(n)))
    if min(mus) <= 0:
        raise SolveError("tracking Hessian not positive definite")
    return Problem(
        hessians=hessians,
        grad0=grad0,
        offsets=offsets,
        constraint=AllSpace(),
        mu=float(min(mus)),
        lip=float(max(lips)),
        kind="tracking",
        extras={"truth": truth, "spec": spec, "observations": observations},
    )


def tracking_objective_direct(spec: TrackingSpec, observations, w: np.ndarray) -> float:
    """The stacked maximum-likelihood objective evaluated term by term."""
    t_steps = spec.horizon
    a = _dynamics_matrix()
    x = np.asarray(w, dtype=float).reshape(t_steps, 4)
    x_bar = np.asarray(spec.prior_mean, dtype=float)
    total = float((x[0] - x_bar) @ (x[0] - x_bar)) / spec.prior_cov
    for t in range(t_steps - 1):
        r = x[t + 1] - a @ x[t]
        total += float(r @ r) / spec.process_noise
    for i in range(spec.n_robots):
        for t, y in observations[i].items():
            r = y - x[t, :2]
            total += float(r @ r) / spec.obs_noise
    return total


# ---------------------------------------------------------------------------
# centralized solvers


def _conjugate_gradient(h: np.ndarray, b: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    x = np.zeros_like(b)
    r = b - h @ x
    p = r.copy()
    rs = float(r @ r)
    norm_b = max(float(np.linalg.norm(b)), 1e-300)
    for _ in range(max_iter):
        if math.sqrt(rs) <= tol * norm_b:
            return x
        hp = h @ p
        alpha = rs / float(p @ hp)
        x = x + alpha * p
        r = r - alpha * hp
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    if math.sqrt(rs) <= 10 * tol * norm_b:
        return x
    raise SolveError(f"conjugate gradient stalled at relative residual {math.sqrt(rs)/norm_b:.3e}")


def centralized_solve(prob: Problem, tol_unconstrained: float = 1e-12, tol_projected: float = 1e-10) -> CentralizedSolution:
    """Solve min over the constraint set of the average cost.

    Unconstrained quadratics go through conjugate gradient on the normal
    equations; constrained problems use projected gradient with step 1/L.
    """
    h = prob.hessians.mean(axis=0)
    g = prob.grad0.mean(axis=0)
    if isinstance(prob.constraint, AllSpace):
        x = _conjugate_gradient(h, -g, tol_unconstrained, max_iter=20 * prob.dim + 100)
        res = float(np.linalg.norm(h @ x + g))
        return CentralizedSolution(
            x_star=x, f_star=prob.global_value(x), method="conjugate-gradient", residual=res
        )
    lip = prob.lip
    x = prob.constraint.project(np.zeros(prob.dim))
    max_iter = 200_000
    for _ in range(max_iter):
        x_new = prob.constraint.project(x - prob.global_grad(x) / lip)
        move = float(np.linalg.norm(x_new - x))
        x = x_new
        if move <= tol_projected:
            return CentralizedSolution(
                x_star=x, f_star=prob.global_value(x), method="projected-gradient", residual=move
            )
    raise SolveError(f"projected gradient did not converge; last step {move:.3e}")
