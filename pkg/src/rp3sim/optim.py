"""Cost functions, constraint sets with exact projections, and growing set sequences."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class ProjectionError(Exception):
    """Raised when an iterative projection fails to converge."""


# ---------------------------------------------------------------------------
# constraint sets


class ConstraintSet:
    """Nonempty, closed, convex set with an exact (or Dykstra) projection."""

    def project(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, x: np.ndarray, tol: float = 1e-9) -> bool:
        return bool(np.linalg.norm(self.project(np.asarray(x, dtype=float)) - x) <= tol)

    def norm_bound(self) -> float:
        """sup of ||x|| over the set; inf for unbounded sets."""
        raise NotImplementedError

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.norm_bound())


@dataclass(frozen=True)
class AllSpace(ConstraintSet):
    def project(self, x):
        return np.asarray(x, dtype=float)

    def norm_bound(self):
        return math.inf


@dataclass(frozen=True)
class Ball(ConstraintSet):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.atleast_1d(np.asarray(self.center, dtype=float)))
        if self.radius < 0:
            raise ValueError("ball radius must be nonnegative")

    def project(self, x):
        x = np.asarray(x, dtype=float)
        v = x - self.center
        nrm = np.linalg.norm(v)
        if nrm <= self.radius:
            return x.copy()
        if nrm == 0.0:
            return self.center.copy()
        return self.center + v * (self.radius / nrm)

    def norm_bound(self):
        return float(np.linalg.norm(self.center) + self.radius)


@dataclass(frozen=True)
class Box(ConstraintSet):
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or (lo > hi).any():
            raise ValueError("box needs lo <= hi elementwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def project(self, x):
        return np.clip(np.asarray(x, dtype=float), self.lo, self.hi)

    def norm_bound(self):
        return float(np.linalg.norm(np.maximum(np.abs(self.lo), np.abs(self.hi))))


@dataclass(frozen=True)
class Intersection(ConstraintSet):
    members: tuple[ConstraintSet, ...]
    tol: float = 1e-10
    max_sweeps: int = 1000

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("intersection needs at least one member")
        object.__setattr__(self, "members", members)

    def project(self, x):
        # Dykstra's alternating projections; exact in the limit for convex sets.
        x = np.asarray(x, dtype=float)
        m = len(self.members)
        if m == 1:
            return self.members[0].project(x)
        y = x.copy()
        corrections = [np.zeros_like(y) for _ in range(m)]
        for _ in range(self.max_sweeps):
            # The iterate can stall while corrections still evolve, so the
            # stopping test tracks the correction increments, not the iterate.
            residual = 0.0
            for idx, member in enumerate(self.members):
                z = y + corrections[idx]
                y_new = member.project(z)
                new_corr = z - y_new
                residual += float(np.linalg.norm(new_corr - corrections[idx]) ** 2)
                corrections[idx] = new_corr
                y = y_new
            residual = math.sqrt(residual)
            if residual <= self.tol:
                return y
        raise ProjectionError(
            f"Dykstra did not converge in {self.max_sweeps} sweeps; residual {residual:.3e}"
        )

    def norm_bound(self):
        # the set is inside every member, so any member's bound applies
        return min(member.norm_bound() for member in self.members)


def project(constraint: ConstraintSet, x: np.ndarray) -> np.ndarray:
    return constraint.project(x)


def intersect(a: ConstraintSet, b: ConstraintSet) -> ConstraintSet:
    """Intersection with the trivial simplifications applied."""
    if isinstance(a, AllSpace):
        return b
    if isinstance(b, AllSpace):
        return a
    if isinstance(a, Box) and isinstance(b, Box):
        return Box(np.maximum(a.lo, b.lo), np.minimum(a.hi, b.hi))
    if isinstance(a, Box) and isinstance(b, Ball) and a.lo.shape == (1,):
        # in one dimension a ball is an interval
        c, r = float(b.center[0]), b.radius
        return Box(np.maximum(a.lo, c - r), np.minimum(a.hi, c + r))
    if isinstance(b, Box) and isinstance(a, Ball):
        return intersect(b, a)
    return Intersection((a, b))


# ---------------------------------------------------------------------------
# growing set sequences (balls at the origin with radius g(k))


class SetSequence:
    def radius(self, k: int) -> float:
        raise NotImplementedError

    def ball(self, k: int) -> Ball:
        r = self.radius(k)
        if not math.isfinite(r):
            raise ValueError("cannot materialize an unbounded ball")
        return Ball(center=np.zeros(1), radius=r)

    def clip(self, v: np.ndarray, k: int) -> np.ndarray:
        """Project rows of v onto the radius-g(k) ball at the origin."""
        r = self.radius(k)
        if not math.isfinite(r):
            return np.asarray(v, dtype=float)
        v = np.asarray(v, dtype=float)
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        scale = np.ones_like(nrm)
        np.divide(r, nrm, out=scale, where=nrm > r)
        return v * scale


@dataclass(frozen=True)
class LinearRadius(SetSequence):
    """g(k) = theta * k; the k = 0 set is the singleton {0}."""

    theta: float

    def __post_init__(self):
        if self.theta < 0:
            raise ValueError("theta must be nonnegative")

    def radius(self, k):
        if k < 0:
            raise ValueError("k must be nonnegative")
        return self.theta * k


@dataclass(frozen=True)
class ExpRadius(SetSequence):
    """g(k) = exp(theta * k)."""

    theta: float

    def radius(self, k):
        if k < 0:
            raise ValueError("k must be nonnegative")
        return math.exp(self.theta * k)


@dataclass(frozen=True)
class CustomRadius(SetSequence):
    fn: Callable[[int], float]

    def radius(self, k):
        if k < 0:
            raise ValueError("k must be nonnegative")
        r = float(self.fn(k))
        if r < 0:
            raise ValueError(f"radius function returned {r} < 0 at k={k}")
        return r


@dataclass(frozen=True)
class UnboundedRadius(SetSequence):
    """No projection: g(k) = inf for all k."""

    def radius(self, k):
        return math.inf


def set_radius(seq: SetSequence, k: int) -> float:
    return seq.radius(k)


# ---------------------------------------------------------------------------
# cost functions


@dataclass(frozen=True)
class CostFunction:
    """Differentiable strongly convex local cost.

    For quadratic costs, hess_norm and grad_at_zero enable the closed-form
    gradient bound over compact sets.
    """

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    mu: float
    lip: float
    dim: int
    hess_norm: float | None = None
    grad_at_zero: np.ndarray | None = None

    def __post_init__(self):
        if self.mu < 0 or self.lip < self.mu:
            raise ValueError("need 0 <= mu <= lip")


def weighted_norm(stack: np.ndarray, u: Sequence[float]) -> float:
    """sqrt(sum_i u_i * ||x_i||^2) over the rows of stack."""
    stack = np.atleast_2d(np.asarray(stack, dtype=float))
    u = np.asarray(u, dtype=float)
    if (u <= 0).any():
        raise ValueError("weights must be strictly positive")
    if len(u) != stack.shape[0]:
        raise ValueError("weight length must match the number of blocks")
    return float(np.sqrt(np.sum(u * np.sum(stack * stack, axis=1))))


def gradient_bound(
    costs: Sequence[CostFunction],
    constraint: ConstraintSet,
    rng: np.random.Generator | None = None,
    samples: int = 2048,
) -> tuple[float, bool]:
    """Upper bound G on sup_{x in X, i} ||grad f_i(x)||.

    Returns (G, estimated). Quadratic costs over a bounded set get the closed
    form ||H||*B + ||grad f(0)||, which is exact as an upper bound. Otherwise
    G is estimated by sampling with a 1.5x safety factor.
    """
    B = constraint.norm_bound()
    if not math.isfinite(B):
        raise ValueError("gradient bound needs a compact constraint set")
    closed = all(c.hess_norm is not None and c.grad_at_zero is not None for c in costs)
    if closed:
        G = max(c.hess_norm * B + float(np.linalg.norm(c.grad_at_zero)) for c in costs)
        return float(G), False
    if rng is None:
        rng = np.random.default_rng(0)
    dim = costs[0].dim
    best = 0.0
    for _ in range(samples):
        x = constraint.project(rng.uniform(-B, B, size=dim))
        best = max(best, max(float(np.linalg.norm(c.grad(x))) for c in costs))
    logger.info("gradient bound estimated by sampling: %.6g (x1.5 safety)", best * 1.5)
    return best * 1.5, True


@dataclass(frozen=True)
class GrowthReport:
    """Whether h(k) outpaces k*g(k) on the horizon, and where the nominal
    projection-identity inequality can first hold."""

    classification: str  # "faster" | "equal-order" | "slower"
    ratio_start: float
    ratio_end: float
    first_k_identity: int | None = None


def validate_growth(
    g: Callable[[int], float],
    h: Callable[[int], float],
    horizon: int,
    n_legit: int | None = None,
    lip: float | None = None,
    grad0: float = 0.0,
    t_max_hint: int = 0,
) -> GrowthReport:
    """Compare h(k) against k*g(k) on [1, horizon].

    Classification is by the trend of h(k)/(k*g(k)): growing without bound is
    "faster" (the asymptotic requirement), roughly flat is "equal-order,
    constant-dependent", and shrinking is "slower". When the problem constants
    are supplied, also report the first k where
    h(k) > n_legit*(h(t_max_hint) + (k - t_max_hint)*(lip*g(k-1) + grad0)).
    """
    ks = np.unique(np.linspace(1, horizon, num=min(horizon, 200), dtype=int))
    ratios = []
    for k in ks:
        denom = k * g(int(k))
        ratios.append(h(int(k)) / denom if denom > 0 else math.inf)
    ratios = np.asarray(ratios)
    mid = ratios[len(ratios) // 2]
    end = ratios[-1]
    if not math.isfinite(mid) or not math.isfinite(end):
        cls = "faster"
    elif end > 2.0 * mid:
        cls = "faster"
    elif end < 0.5 * mid:
        cls = "slower"
    else:
        cls = "equal-order"

    first_k = None
    if n_legit is not None and lip is not None:
        h_t = h(t_max_hint)
        for k in range(max(t_max_hint + 1, 1), horizon + 1):
            bound = n_legit * (h_t + (k - t_max_hint) * (lip * g(k - 1) + grad0))
            if h(k) > bound:
                first_k = k
                break
    return GrowthReport(
        classification=cls,
        ratio_start=float(ratios[0]),
        ratio_end=float(end),
        first_k_identity=first_k,
    )


# ---------------------------------------------------------------------------
# numerical certification helpers


def check_strong_convexity(
    cost: CostFunction,
    rng: np.random.Generator,
    pairs: int = 1000,
    scale: float = 10.0,
    slack: float = 1e-9,
) -> bool:
    """<grad f(x) - grad f(y), x - y> >= mu ||x-y||^2 on random pairs."""
    for _ in range(pairs):
        x = rng.uniform(-scale, scale, size=cost.dim)
        y = rng.uniform(-scale, scale, size=cost.dim)
        lhs = float(np.dot(cost.grad(x) - cost.grad(y), x - y))
        rhs = cost.mu * float(np.dot(x - y, x - y))
        if lhs < rhs - slack * (1.0 + abs(rhs)):
            return False
    return True


def check_smoothness(
    cost: CostFunction,
    rng: np.random.Generator,
    pairs: int = 1000,
    scale: float = 10.0,
    slack: float = 1e-9,
) -> bool:
    """||grad f(x) - grad f(y)|| <= L ||x-y|| on random pairs."""
    for _ in range(pairs):
        x = rng.uniform(-scale, scale, size=cost.dim)
        y = rng.uniform(-scale, scale, size=cost.dim)
        lhs = float(np.linalg.norm(cost.grad(x) - cost.grad(y)))
        rhs = cost.lip * float(np.linalg.norm(x - y))
        if lhs > rhs + slack * (1.0 + rhs):
            return False
    return True


def finite_difference_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for i in range(len(x)):
        step = h * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = step
        out[i] = (f(x + e) - f(x - e)) / (2.0 * step)
    return out
