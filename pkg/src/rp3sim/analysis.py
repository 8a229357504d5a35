"""Error functionals, contraction parameters, the 3x3 gain matrix, and bound curves.

The gain matrix M(eta, lambda) bounds the one-step evolution of the error
vector (optimality, consensus, tracking); its spectral radius below one
certifies geometric convergence. All quantities here live on the nominal
(legitimate-only) system of size n.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import NominalSubgraph, diameter, max_edge_utility
from .trust import LearningBounds, TrustModelParams, p_e


class AnalysisError(Exception):
    pass


# ---------------------------------------------------------------------------
# Perron vectors


def perron_vectors(
    r_bar: np.ndarray,
    c_bar: np.ndarray,
    tol: float = 1e-12,
    max_iter: int = 100_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Positive stochastic left eigenvector of R and right eigenvector of C at 1.

    Power iteration; both matrices must be stochastic (rows of R, columns of C)
    to 1e-12 and primitive (self-loops plus strong connectivity).
    """
    r_bar = np.asarray(r_bar, dtype=float)
    c_bar = np.asarray(c_bar, dtype=float)
    n = r_bar.shape[0]
    if np.abs(r_bar.sum(axis=1) - 1.0).max() > 1e-12:
        raise AnalysisError("R is not row stochastic")
    if np.abs(c_bar.sum(axis=0) - 1.0).max() > 1e-12:
        raise AnalysisError("C is not column stochastic")

    def iterate(mat):
        v = np.full(n, 1.0 / n)
        for _ in range(max_iter):
            w = mat @ v
            w /= w.sum()
            if np.abs(w - v).max() <= tol:
                return w
            v = w
        raise AnalysisError(
            f"Perron iteration did not converge; residual {np.abs(w - v).max():.3e}"
        )

    phi = iterate(r_bar.T)
    pi = iterate(c_bar)
    if (phi <= 0).any() or (pi <= 0).any():
        raise AnalysisError("Perron vector has nonpositive entries; matrix not primitive?")
    return phi, pi


# ---------------------------------------------------------------------------
# contraction parameters and gain matrix


@dataclass(frozen=True)
class ContractionParams:
    sigma: float
    tau: float
    r: float
    varphi: float
    min_pi: float
    max_pi: float
    min_phi: float
    max_phi: float
    n: int
    diam: int
    edge_utility: int

    def __post_init__(self):
        if self.n > 1 and not (0.0 < self.sigma < 1.0 and 0.0 < self.tau < 1.0):
            raise AnalysisError(f"sigma/tau out of (0,1): {self.sigma}, {self.tau}")


def contraction_params(
    g_l: NominalSubgraph,
    r_bar: np.ndarray,
    c_bar: np.ndarray,
    phi: np.ndarray,
    pi: np.ndarray,
) -> ContractionParams:
    """Contraction coefficients from the nominal mixing matrices.

    A single agent has no consensus error; that degenerate case gets
    sigma = tau = 0.
    """
    n = g_l.n
    if n == 1:
        return ContractionParams(
            sigma=0.0, tau=0.0, r=2.0, varphi=2.0,
            min_pi=1.0, max_pi=1.0, min_phi=1.0, max_phi=1.0,
            n=1, diam=0, edge_utility=0,
        )
    d = diameter(g_l)
    ku = max_edge_utility(g_l)
    min_r = float(r_bar[r_bar > 0].min())
    min_c = float(c_bar[c_bar > 0].min())
    min_phi, max_phi = float(phi.min()), float(phi.max())
    min_pi, max_pi = float(pi.min()), float(pi.max())
    rad_sigma = min_phi * min_r**2 / (max_phi**2 * d * ku)
    rad_tau = min_pi**2 * min_c**2 / (max_pi**3 * d * ku)
    for name, rad in (("sigma", rad_sigma), ("tau", rad_tau)):
        if not (0.0 < rad <= 1.0):
            raise AnalysisError(f"{name} radicand 1-{rad} outside [0,1); inconsistent inputs")
    return ContractionParams(
        sigma=math.sqrt(1.0 - rad_sigma),
        tau=math.sqrt(1.0 - rad_tau),
        r=math.sqrt(1.0 / min_pi) + math.sqrt(n),
        varphi=math.sqrt(1.0 / min_phi) + math.sqrt(n),
        min_pi=min_pi, max_pi=max_pi, min_phi=min_phi, max_phi=max_phi,
        n=n, diam=d, edge_utility=ku,
    )


def step_size_bounds(params: ContractionParams, mu: float, lip: float) -> tuple[float, "LambdaBound"]:
    """(eta_max, lambda bound as a function of eta)."""
    if params.n > 1 and (params.sigma >= 1.0 or params.tau >= 1.0):
        raise AnalysisError("sigma or tau >= 1")
    eta_max = 1.0 / (params.n * lip)
    return eta_max, LambdaBound(params=params, mu=mu)


@dataclass(frozen=True)
class LambdaBound:
    params: ContractionParams
    mu: float

    def __call__(self, eta: float) -> float:
        p = self.params
        n, s, t, r, v = p.n, p.sigma, p.tau, p.r, p.varphi
        rn = math.sqrt(n)
        coupling = (1.0 + eta * n * p.min_pi * self.mu) * v * (
            2.0 * rn * (1.0 - t) + r * (1.0 - s) + 2.0 * r * (1.0 + s)
        )
        return min(
            (1.0 - s) / (2.0 * v * rn),
            (1.0 - t) / (r * v),
            eta * n * p.min_pi * self.mu * (1.0 - s) * (1.0 - t) / coupling,
        )


def auto_step_sizes(
    params: ContractionParams, mu: float, lip: float, safety: float = 0.5
) -> tuple[float, float]:
    """Certified (eta, lambda) strictly inside the admissible region."""
    eta_max, lam_of = step_size_bounds(params, mu, lip)
    eta = safety * eta_max
    lam = safety * lam_of(eta)
    return eta, lam


def build_M(eta: float, lam: float, params: ContractionParams, mu: float, lip: float) -> np.ndarray:
    """The one-step 3x3 gain matrix at the given step sizes."""
    p = params
    n, s, t, r, v = p.n, p.sigma, p.tau, p.r, p.varphi
    rn = math.sqrt(n)
    return np.array(
        [
            [1.0 - eta * lam * n * p.min_pi * mu, lam * v * rn, lam / lip],
            [2.0 * lam, s + 2.0 * lam * rn * v, 2.0 * lam / lip],
            [2.0 * lam * lip * r * v, lip * r * v * (1.0 + s + lam * v * rn), t + lam * r * v],
        ]
    )


# ---------------------------------------------------------------------------
# spectral radius with a dual-method cross-check


def _char_poly_largest_real_root(m: np.ndarray) -> float:
    tr = float(np.trace(m))
    m2 = 0.5 * (tr**2 - float(np.trace(m @ m)))
    det = float(np.linalg.det(m))
    roots = np.roots([1.0, -tr, m2, -det])
    scale = max(1.0, np.abs(roots).max())
    # Multiple roots split numerically by ~eps^(1/multiplicity); cluster the
    # computed roots and use cluster means, which are accurate because the
    # elementary symmetric sums are exact.
    clusters: list[list[complex]] = []
    for r in sorted(roots, key=lambda z: (z.real, z.imag)):
        if clusters and abs(r - clusters[-1][0]) <= 1e-4 * scale:
            clusters[-1].append(r)
        else:
            clusters.append([r])
    real = [
        float(np.mean(c).real)
        for c in clusters
        if abs(np.mean(c).imag) <= 1e-8 * scale
    ]
    if not real:
        raise AnalysisError("characteristic polynomial has no real root")
    return max(real)


def _gelfand_radius(m: np.ndarray, squarings: int = 60) -> float:
    # rho = lim ||M^(2^j)||^(1/2^j); repeated squaring with norm factoring
    a = m.astype(float)
    log_norm = 0.0
    for j in range(squarings):
        nrm = float(np.linalg.norm(a, 2))
        if nrm == 0.0:
            return 0.0
        log_norm += math.log(nrm) / (2.0**j)
        a = (a / nrm) @ (a / nrm)
    log_norm += math.log(max(float(np.linalg.norm(a, 2)), 1e-300)) / (2.0**squarings)
    return math.exp(log_norm)


def spectral_radius(m: np.ndarray, tol: float = 1e-12, max_iter: int = 20_000) -> float:
    """Dominant eigenvalue of a nonnegative matrix.

    Power iteration with a residual stop; defective or tied-modulus cases fall
    back to a repeated-squaring (Gelfand) estimate. Either way the result is
    cross-checked against the cubic characteristic polynomial's largest real
    root (3x3 inputs) and a disagreement above 1e-8 is an error.
    """
    m = np.asarray(m, dtype=float)
    if (m < 0).any():
        raise AnalysisError("matrix must be nonnegative")
    if not m.any():
        return 0.0
    n = m.shape[0]
    rng = np.random.default_rng(12345)
    x = np.abs(rng.normal(size=n)) + 1e-3
    x /= np.linalg.norm(x)
    lam = 0.0
    converged = False
    for _ in range(max_iter):
        y = m @ x
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            lam, converged = 0.0, True
            break
        x_new = y / ny
        lam_new = float(x_new @ (m @ x_new))
        if np.linalg.norm(m @ x_new - lam_new * x_new) <= tol * max(1.0, abs(lam_new)):
            lam, converged = lam_new, True
            break
        x, lam = x_new, lam_new
    if not converged:
        lam = _gelfand_radius(m)
    if n == 3:
        ref = _char_poly_largest_real_root(m)
        if abs(lam - ref) > 1e-8 * max(1.0, abs(ref)):
            raise AnalysisError(
                f"spectral radius methods disagree: iteration {lam!r} vs polynomial {ref!r}"
            )
    return lam


# ---------------------------------------------------------------------------
# error functionals


@dataclass(frozen=True)
class ErrorVector:
    opt: float
    cons: float
    track: float

    def as_array(self) -> np.ndarray:
        return np.array([self.opt, self.cons, self.track])


def error_vector(
    x: np.ndarray,
    y: np.ndarray,
    x_star: np.ndarray,
    phi: np.ndarray,
    pi: np.ndarray,
) -> ErrorVector:
    """(optimality, consensus, tracking) errors over the legitimate stack.

    x and y are (n, d) stacks; for the resilient algorithm the caller passes
    y[k] = s[k] - s[k-1].
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    diff = x - np.asarray(x_star, dtype=float)[None, :]
    opt = math.sqrt(float(np.sum(phi * np.sum(diff * diff, axis=1))))
    # consensus: sum_i sum_j phi_i phi_j ||x_i - x_j||^2, via explicit pairwise
    # differences (the Gram expansion cancels catastrophically near consensus)
    pd = x[:, None, :] - x[None, :, :]
    pair = np.sum(pd * pd, axis=2)
    cons = math.sqrt(float(phi @ pair @ phi))
    total = y.sum(axis=0)
    dev = y / pi[:, None] - total[None, :]
    track = math.sqrt(float(np.sum(pi * np.sum(dev * dev, axis=1))))
    return ErrorVector(opt=opt, cons=cons, track=track)


def check_one_step_contraction(
    e_next: np.ndarray, m: np.ndarray, e_now: np.ndarray, tol: float
) -> bool:
    """Elementwise e_next <= M e_now + tol (1 + ||e_now||)."""
    e_next = np.asarray(e_next, dtype=float)
    e_now = np.asarray(e_now, dtype=float)
    bound = m @ e_now + tol * (1.0 + float(np.linalg.norm(e_now)))
    return bool((e_next <= bound).all())


# ---------------------------------------------------------------------------
# bound curves


def worst_case_bounds(k: float, B: float, theta: float, n_legit: int, min_pi: float) -> np.ndarray:
    """(2B, 2B, 2(n_L + 1) theta k / min_pi): the compact-mode error ceiling."""
    return np.array([2.0 * B, 2.0 * B, 2.0 * (n_legit + 1) * theta * k / min_pi])


def expected_bound_compact(
    k: int,
    m: np.ndarray,
    B: float,
    theta: float,
    n_legit: int,
    min_pi: float,
    grad_bound: float,
    bounds: LearningBounds,
    params: TrustModelParams,
    rho: float | None = None,
) -> np.ndarray:
    """Expected-error curve for compact constraint sets with linear tracking sets.

    Pass a precomputed rho(M) when evaluating many grid points; the polynomial
    shortcut is too noisy when the spectral gap is below ~1e-11.
    """
    if rho is None:
        rho = spectral_radius(m)
    if rho >= 1.0:
        raise AnalysisError(f"bound needs rho(M) < 1, got {rho}")
    half = k // 2
    inv = np.linalg.inv(np.eye(3) - m)
    first = np.linalg.matrix_power(m, k - half) @ inv @ worst_case_bounds(
        half, B, theta, n_legit, min_pi
    )
    coeff = (theta - n_legit * grad_bound) / (n_legit * (theta - grad_bound))
    tail = min(p_e(coeff * (half + 1) - bounds.delta, bounds, params), 1.0)
    second = tail * worst_case_bounds(k, B, theta, n_legit, min_pi)
    return first + second


def expected_bound_unbounded(
    k: int,
    m: np.ndarray,
    theta1: float,
    theta2: float,
    n_legit: int,
    min_pi: float,
    delta_t: float,
    bounds: LearningBounds,
    params: TrustModelParams,
    x_star_norm: float | None = None,
    rho: float | None = None,
) -> np.ndarray:
    """Expected-error curve for unbounded constraint sets with exponential sets."""
    if not (theta2 > theta1 > 0):
        raise AnalysisError("need theta2 > theta1 > 0")
    if x_star_norm is not None and x_star_norm > 1.0 and k < math.log(x_star_norm) / theta1:
        raise AnalysisError(f"bound valid only for k >= ln||x*||/theta1 = {math.log(x_star_norm)/theta1:.3f}")
    if rho is None:
        rho = spectral_radius(m)
    if rho >= 1.0:
        raise AnalysisError(f"bound needs rho(M) < 1, got {rho}")
    half = k // 2
    track_coeff = 2.0 * (n_legit + 1) / min_pi

    def vec(idx):
        return np.array(
            [
                2.0 * math.exp(theta1 * idx),
                2.0 * math.exp(theta1 * idx),
                track_coeff * math.exp(theta2 * idx),
            ]
        )

    inv = np.linalg.inv(np.eye(3) - m)
    first = np.linalg.matrix_power(m, k - half) @ inv @ vec(half)
    tail = min(p_e(half + 1.0 - delta_t, bounds, params), 1.0)
    return first + tail * vec(k)


def geometric_rate_condition(
    theta2: float, m: np.ndarray, e_legit: float, e_malicious: float
) -> bool:
    """theta2 < min{-ln rho(M), E_L^2, E_M^2} (false when rho(M) >= 1)."""
    rho = spectral_radius(m)
    if rho >= 1.0:
        return False
    return theta2 < min(-math.log(rho), e_legit**2, e_malicious**2)
