"""Mode-by-mode Dirichlet problems for the linearization about a Delaunay solution in the unit ball.

With t = -log r and w = r^{(2-N)/2} sum_j w_j(t) Y_j, f = r^{-(N+2)/2} sum_j f_j(t) Y_j, the operator
Delta + N(N+2)/4 u^{4/(N-2)} splits into

    L_j w_j = w_j'' - ((N-2)^2/4 + lambda_j) w_j + N(N+2)/4 v(t + log R)^{4/(N-2)} w_j = f_j,

posed on t >= 0 with w_j(0) = 0.  All arrays here use the shifted variable t (so r = 1 is t = 0).
The low modes (degree 0 and 1) carry a deficiency element built from the Jacobi fields
Phi^{0,+} = vdot and Phi^{1,+} = e^{-s}((N-2)/2 v - vdot).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import integrate, linalg

from .approx import orbit_cache
from .delaunay import DelaunayOrbit
from .harmonics import COORDINATE_NORMALIZATION, mode_degrees

__all__ = [
    "ConditioningError",
    "ModeProblem",
    "MODE_GRID",
    "make_mode_problem",
    "numerov_backward",
    "numerov_bvp",
    "numerov_start_derivative",
    "deficiency_profile",
    "deficiency_basis",
    "HomogeneousPair",
    "homogeneous_pair",
    "solve_mode_low",
    "solve_mode_high",
    "interior_dtn",
    "interior_dtn_limit",
    "lower_bound_constant",
    "InteriorSolution",
    "BallSolver",
    "solve_dirichlet_ball",
]


class ConditioningError(RuntimeError):
    pass


# Standalone per-mode solves are cheap, so they default to a finer grid than the 3-D pipeline: the
# degree-0 Green function is of size 1/eps, which magnifies the fourth-order truncation error.
MODE_GRID = 4096


@dataclass(frozen=True)
class ModeProblem:
    eps: float
    R: float
    dim: int
    degree: int
    h: float
    n: int
    orbit: DelaunayOrbit = field(repr=False)

    @property
    def t(self) -> np.ndarray:
        return self.h * np.arange(self.n)

    @property
    def s(self) -> np.ndarray:
        return self.t + math.log(self.R)

    @property
    def eigenvalue(self) -> float:
        return self.degree * (self.degree + self.dim - 2)

    @property
    def gamma(self) -> float:
        return math.sqrt((self.dim - 2) ** 2 / 4 + self.eigenvalue)

    @property
    def delta(self) -> float:
        return math.sqrt(self.gamma**2 - self.dim * (self.dim + 2) / 4 + 0j).real

    def potential(self) -> np.ndarray:
        v, _ = self.orbit.evaluate(self.s)
        return self.dim * (self.dim + 2) / 4 * v ** (4 / (self.dim - 2))

    def q(self) -> np.ndarray:
        return (self.dim - 2) ** 2 / 4 + self.eigenvalue - self.potential()

    def apply(self, w: np.ndarray) -> np.ndarray:
        """Fourth order finite-difference application of L_j on interior nodes (ends set to nan)."""
        h = self.h
        out = np.full_like(w, np.nan)
        d2 = (-w[:-4] + 16 * w[1:-3] - 30 * w[2:-2] + 16 * w[3:-1] - w[4:]) / (12 * h * h)
        out[2:-2] = d2 - self.q()[2:-2] * w[2:-2]
        return out


def make_mode_problem(eps: float, R: float, dim: int, degree: int, n_per_period: int = MODE_GRID,
                      periods: float = 3.0, extra: float = 10.0) -> ModeProblem:
    """Grid on t in [0, periods*T_eps + extra] (s in [log R, log R + ...]) with T_eps/n_per_period spacing."""
    orbit = orbit_cache(dim, eps)
    h = orbit.period / n_per_period
    n = int(math.ceil((periods * orbit.period + extra) / h)) + 1
    return ModeProblem(float(eps), float(R), dim, degree, h, n, orbit)


@numba.njit(cache=True)
def _numerov_backward(q, f, h):
    n, m = f.shape
    y = np.zeros((n, m))
    c = h * h / 12.0
    for k in range(n - 2, 0, -1):
        a_next = 1.0 - c * q[k + 1]
        a_mid = 2.0 + 10.0 * c * q[k]
        a_prev = 1.0 - c * q[k - 1]
        for j in range(m):
            rhs = c * (f[k + 1, j] + 10.0 * f[k, j] + f[k - 1, j])
            y[k - 1, j] = (rhs + a_mid * y[k, j] - a_next * y[k + 1, j]) / a_prev
    return y


def numerov_backward(q: np.ndarray, f: np.ndarray, h: float) -> np.ndarray:
    """Solution of y'' = q y + f with y = 0 at the last two nodes (zero Cauchy data at the far end)."""
    f2 = np.ascontiguousarray(f.reshape(f.shape[0], -1), dtype=float)
    y = _numerov_backward(np.ascontiguousarray(q, dtype=float), f2, float(h))
    return y.reshape(f.shape)


def numerov_bvp(q: np.ndarray, f: np.ndarray, h: float, y0=0.0, yend=0.0) -> np.ndarray:
    """Two-point Numerov solve of y'' = q y + f with Dirichlet data at both ends."""
    n = q.shape[0]
    f2 = f.reshape(n, -1)
    c = h * h / 12.0
    y0 = np.broadcast_to(np.asarray(y0, dtype=float), (f2.shape[1],))
    yend = np.broadcast_to(np.asarray(yend, dtype=float), (f2.shape[1],))
    # unknowns y_1..y_{n-2}
    lo = 1.0 - c * q[:-2]
    mid = -(2.0 + 10.0 * c * q[1:-1])
    hi = 1.0 - c * q[2:]
    rhs = c * (f2[2:] + 10.0 * f2[1:-1] + f2[:-2])
    rhs[0] -= lo[0] * y0
    rhs[-1] -= hi[-1] * yend
    ab = np.zeros((3, n - 2))
    ab[0, 1:] = hi[:-1]
    ab[1] = mid
    ab[2, :-1] = lo[1:]
    inner = linalg.solve_banded((1, 1), ab, rhs, check_finite=False)
    y = np.empty((n, f2.shape[1]))
    y[0] = y0
    y[-1] = yend
    y[1:-1] = inner
    return y.reshape(f.shape)


def numerov_start_derivative(y: np.ndarray, q: np.ndarray, f: np.ndarray, h: float) -> np.ndarray:
    """Fourth order y'(0) from y_0, y_1 and the second derivatives q y + f at nodes 0, 1, 2."""
    qq = q[:3].reshape((3,) + (1,) * (y.ndim - 1))
    ypp = qq * y[:3] + f[:3]
    return (y[1] - y[0]) / h - h * (7 * ypp[0] + 6 * ypp[1] - ypp[2]) / 24


def deficiency_profile(problem: ModeProblem):
    """Phi^{0,+} or Phi^{1,+} and their derivatives on the grid (as functions of s = t + log R)."""
    s = problem.s
    orb = problem.orbit
    v, vd = orb.evaluate(s)
    vdd = orb.accel(v)
    a = (problem.dim - 2) / 2
    if problem.degree == 0:
        return vd, vdd
    if problem.degree == 1:
        phi = np.exp(-s) * (a * v - vd)
        dphi = -phi + np.exp(-s) * (a * vd - vdd)
        return phi, dphi
    raise ValueError("deficiency profiles exist only for degrees 0 and 1")


def lower_bound_constant(dim: int, R: float, degree: int) -> float:
    """eps -> 0 limit of Phi^{j,+}(log R)/eps, used as the conditioning yardstick."""
    a = (dim - 2) / 2
    if degree == 0:
        return a * math.sinh(a * math.log(R))
    return a * R ** (-dim / 2)


def _check_conditioning(problem: ModeProblem, phi0: float) -> None:
    m = lower_bound_constant(problem.dim, problem.R, problem.degree)
    if not abs(phi0) >= 0.5 * m * problem.eps:
        raise ConditioningError(
            f"Jacobi field at the boundary is {phi0:.3e}, below half the lower bound {0.5 * m * problem.eps:.3e}"
        )


@dataclass(frozen=True)
class HomogeneousPair:
    t: np.ndarray
    y_dec: np.ndarray
    dy_dec: np.ndarray
    y_gro: np.ndarray
    dy_gro: np.ndarray

    def wronskian(self) -> np.ndarray:
        return self.y_dec * self.dy_gro - self.dy_dec * self.y_gro


def homogeneous_pair(problem: ModeProblem, potential_scale: float = 1.0, rtol: float = 1e-12,
                     t_end: float | None = None) -> HomogeneousPair:
    """Decaying solution (y_dec(0) = 1) and the solution vanishing at t = 0 with unit slope.

    y_dec is obtained from the Riccati equation z' = q - z^2 for z = y'/y, which is stable when
    integrated towards t = 0 and converges there to the decaying branch; y_gro is integrated forward.
    Both are returned on the grid nodes up to t_end (default: a fifth of the problem length).
    """
    if problem.degree <= 1:
        raise ValueError("low modes use the explicit Jacobi fields")
    logR = math.log(problem.R)
    orb = problem.orbit
    base = (problem.dim - 2) ** 2 / 4 + problem.eigenvalue
    cpot = potential_scale * problem.dim * (problem.dim + 2) / 4
    ex = 4 / (problem.dim - 2)

    def q(t):
        v, _ = orb.evaluate(t + logR)
        return base - cpot * v**ex

    T_far = problem.t[-1]
    z_far = -math.sqrt(q(T_far))
    sol = integrate.solve_ivp(lambda t, z: q(t) - z * z, (T_far, 0.0), [z_far], method="DOP853",
                              rtol=rtol, atol=1e-14, dense_output=True)
    if not sol.success:
        raise ConditioningError("Riccati integration failed: " + sol.message)
    if t_end is None:
        t_end = T_far / 5
    tg = problem.t[problem.t <= t_end + 1e-12]
    logy = integrate.solve_ivp(lambda t, Z: sol.sol(t), (0.0, tg[-1]), [0.0], method="DOP853", t_eval=tg,
                               rtol=rtol, atol=1e-14).y[0]
    z = sol.sol(tg)[0]
    y_dec = np.exp(logy)
    gro = integrate.solve_ivp(lambda t, Y: [Y[1], q(t) * Y[0]], (0.0, tg[-1]), [0.0, 1.0], method="DOP853",
                              t_eval=tg, rtol=rtol, atol=1e-14)
    return HomogeneousPair(tg, y_dec, z * y_dec, gro.y[0], gro.y[1])


def solve_mode_low(problem: ModeProblem, f: np.ndarray, mu: float = 1.5):
    """Dirichlet solve for degree 0 or 1: returns (w, K, wbar) with w = wbar + K B, w(0) = 0.

    wbar is the particular solution decaying at the far end (zero Cauchy data there), B is the
    deficiency element (1/eps) R^{(N-2)/2} Phi^{j,+}(t + log R) in orthonormal-mode units and K its
    coefficient.  Only Phi^{j,+} enters.
    """
    if problem.degree > 1:
        raise ValueError("solve_mode_low handles degrees 0 and 1")
    if problem.degree == 0 and not mu > 0:
        raise ValueError("degree 0 requires mu > 0")
    if problem.degree == 1 and not mu > 1:
        raise ValueError("degree 1 requires mu > 1")
    q = problem.q()
    wbar = numerov_backward(q, f, problem.h)
    B, _ = deficiency_basis(problem)
    _check_conditioning(problem, B[0] / _basis_scale(problem))
    K = -wbar[0] / B[0]
    w = wbar + np.multiply.outer(B, K) if wbar.ndim > 1 else wbar + K * B
    return w, K, wbar


def solve_mode_high(problem: ModeProblem, f: np.ndarray, mu: float = 1.5) -> np.ndarray:
    """Dirichlet solve for degree >= 2 with decay (zero) imposed at the far end of the grid."""
    if problem.degree <= 1:
        raise ValueError("solve_mode_high handles degrees >= 2")
    if not (-problem.dim < mu < 2):
        raise ValueError("weight outside (-N, 2)")
    return numerov_bvp(problem.q(), f, problem.h)


def _basis_scale(problem: ModeProblem) -> float:
    a = (problem.dim - 2) / 2
    norm = COORDINATE_NORMALIZATION[0 if problem.degree == 0 else 1]
    return problem.R**a * norm / problem.eps


def deficiency_basis(problem: ModeProblem):
    """Mode function of (1/eps) Psi^{j,+}((x)/R) restricted to the unit ball and its t-derivative."""
    phi, dphi = deficiency_profile(problem)
    sc = _basis_scale(problem)
    return sc * phi, sc * dphi


def interior_dtn_limit(dim: int, R: float, degree: int) -> float:
    a = (dim - 2) / 2
    if degree == 0:
        return (2 - dim) * R ** (dim - 2) / (R ** (dim - 2) - 1)
    gamma = math.sqrt(a * a + degree * (degree + dim - 2))
    return -a + gamma


def interior_dtn(eps: float, R: float, dim: int, degree: int, n_per_period: int = MODE_GRID) -> float:
    """Normal derivative at r = 1 of the interior homogeneous solution with unit boundary value."""
    problem = make_mode_problem(eps, R, dim, degree, n_per_period)
    a = (dim - 2) / 2
    if degree <= 1:
        phi, dphi = deficiency_profile(problem)
        _check_conditioning(problem, phi[0])
        return -a - dphi[0] / phi[0]
    pair = homogeneous_pair(problem, t_end=problem.h * 4)
    return -a - pair.dy_dec[0]


@dataclass
class InteriorSolution:
    """Per-ball solution: mode functions w_j(t) (orthonormal modes), deficiency coefficients K^j
    for j = 0..N, and the decaying part G(f) = w - sum K^j B_j."""

    t: np.ndarray
    w: np.ndarray
    K: np.ndarray
    G: np.ndarray
    neumann: np.ndarray
    mu: float

    def weighted_bounds(self, dim: int) -> np.ndarray:
        """sup_t e^{delta t}|G_j(t)| per mode with delta = (N-2)/2 + mu."""
        delta = (dim - 2) / 2 + self.mu
        return np.max(np.abs(self.G) * np.exp(delta * self.t)[:, None], axis=0)


class BallSolver:
    """All modes up to lmax on one shared grid for a single ball."""

    def __init__(self, eps: float, R: float, dim: int, lmax: int, n_per_period: int = 2048,
                 periods: float = 3.0, extra: float = 10.0):
        self.eps, self.R, self.dim, self.lmax = float(eps), float(R), dim, lmax
        self.degrees = mode_degrees(lmax)
        self.problems = [make_mode_problem(eps, R, dim, l, n_per_period, periods, extra) for l in range(lmax + 1)]
        p0 = self.problems[0]
        self.h, self.n = p0.h, p0.n
        self.t = p0.t
        self.a = (dim - 2) / 2
        self.q = [p.q() for p in self.problems]
        self.potential = p0.potential()
        self.basis = {}
        for l in (0, 1):
            if l <= lmax:
                B, dB = deficiency_basis(self.problems[l])
                _check_conditioning(self.problems[l], B[0] / _basis_scale(self.problems[l]))
                self.basis[l] = (B, dB)
        self.y_dec = {}
        self.dtn = np.empty(len(self.degrees))
        for l in range(lmax + 1):
            if l <= 1:
                B, dB = self.basis[l]
                dt = -self.a - dB[0] / B[0]
            else:
                y = numerov_bvp(self.q[l], np.zeros(self.n), self.h, 1.0, 0.0)
                dy0 = numerov_start_derivative(y, self.q[l], np.zeros(self.n), self.h)
                self.y_dec[l] = y
                dt = -self.a - float(dy0)
            self.dtn[self.degrees == l] = dt

    @property
    def n_deficiency(self) -> int:
        return 1 + (self.dim if self.lmax >= 1 else 0)

    def solve(self, F: np.ndarray, mu: float = 1.5) -> InteriorSolution:
        """F has shape (n_t, n_modes) holding the source mode functions f_j(t)."""
        n_m = F.shape[1]
        W = np.empty_like(F)
        G = np.empty_like(F)
        nd = min(self.n_deficiency, n_m)
        K = np.zeros(nd)
        for l in range(self.lmax + 1):
            cols = np.nonzero(self.degrees[:n_m] == l)[0]
            if cols.size == 0:
                continue
            f = F[:, cols]
            if l <= 1:
                wbar = numerov_backward(self.q[l], f, self.h)
                B, _ = self.basis[l]
                k = -wbar[0] / B[0]
                W[:, cols] = wbar + np.outer(B, k)
                G[:, cols] = wbar
                K[cols] = k
            else:
                w = numerov_bvp(self.q[l], f, self.h)
                W[:, cols] = w
                G[:, cols] = w
        dW = np.empty(n_m)
        for l in range(self.lmax + 1):
            cols = np.nonzero(self.degrees[:n_m] == l)[0]
            if cols.size:
                dW[cols] = numerov_start_derivative(W[:, cols], self.q[l], F[:, cols], self.h)
        # with w(0) = 0 the radial derivative at r = 1 is -w'(0)
        return InteriorSolution(self.t, W, K, G, -dW, mu)

    def homogeneous(self, psi: np.ndarray):
        """Interior extension of boundary data psi (orthonormal modes): returns (w, K, G)."""
        n_m = psi.shape[0]
        W = np.empty((self.n, n_m))
        G = np.zeros((self.n, n_m))
        nd = min(self.n_deficiency, n_m)
        K = np.zeros(nd)
        for j in range(n_m):
            l = self.degrees[j]
            if l <= 1:
                B, _ = self.basis[l]
                K[j] = psi[j] / B[0]
                W[:, j] = K[j] * B
            else:
                W[:, j] = psi[j] * self.y_dec[l]
                G[:, j] = W[:, j]
        return W, K, G

    def deficiency_mode_functions(self) -> np.ndarray:
        """B_j(t) for j = 0..N as columns."""
        cols = [self.basis[0][0]]
        if self.lmax >= 1:
            cols += [self.basis[1][0]] * self.dim
        return np.stack(cols, axis=1)


def solve_dirichlet_ball(eps: float, R: float, f_modes: np.ndarray, mu: float = 1.5, dim: int = 3,
                         lmax: int | None = None, n_per_period: int = MODE_GRID) -> InteriorSolution:
    """Assemble w = G(f) + sum_j K^j (1/eps) Psi^{j,+} for source mode functions f_modes[t, j]."""
    if lmax is None:
        lmax = int(round(math.sqrt(f_modes.shape[1]))) - 1
    solver = BallSolver(eps, R, dim, lmax, n_per_period)
    if f_modes.shape[0] != solver.n:
        raise ValueError(f"source has {f_modes.shape[0]} nodes, grid has {solver.n}")
    return solver.solve(f_modes, mu)
