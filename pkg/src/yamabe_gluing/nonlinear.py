"""Fixed-point solution of Lap u + N(N-2)/4 u^{(N+2)/(N-2)} = 0 near the approximate solution.

The unknown is w = (v, S, alpha): u = ubar(R + S, a + alpha) + v.  The map
    w -> w - Lambda~^{-1} N(w),   N(w) = zeta(R + S, a + alpha) + Lap v + c[(ubar' + v)^p - ubar'^p],
with Lambda~ fixed at the starting parameters, is iterated until the residual is small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .approx import ApproxSolution
from .gluing import (
    LinearizedProblem,
    ModelSolver,
    full_linearized_solve,
    mtilde_norm,
    sample_approx,
)
from .harmonics import mode_degrees, n_modes
from .interior import numerov_bvp, numerov_start_derivative
from .spaces import Discretization, WeightedField, weighted_norm

__all__ = [
    "DeficiencyState",
    "Iterate",
    "ExactSolution",
    "residual",
    "picard_step",
    "ConvergenceError",
    "PositivityError",
    "NonlinearSolution",
    "NonlinearSolver",
    "solve_nonlinear",
    "symmetry_defect",
    "nondegeneracy_spectrum",
    "NondegeneracyReport",
]


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, history: list):
        super().__init__(message)
        self.history = history


class PositivityError(RuntimeError):
    pass


def _power_difference(u, v, p):
    """(u + v)^p - u^p without cancellation for |v| << u."""
    return u**p * np.expm1(p * np.log1p(v / u))


@dataclass
class DeficiencyState:
    """Parameter corrections: S shifts the Delaunay scales R, alpha the displacements a."""

    S: np.ndarray
    alpha: np.ndarray

    @classmethod
    def zeros(cls, n: int, dim: int) -> "DeficiencyState":
        return cls(np.zeros(n), np.zeros((n, dim)))

    def norm(self, config) -> float:
        return float(config.eps * np.sum(np.abs(self.S)) + config.eps * config.rho * np.sum(np.abs(self.alpha)))


@dataclass
class Iterate:
    """Unknown w = (v, S, alpha) of the fixed-point map, with Lv tracked alongside v."""

    v: WeightedField
    Lv: WeightedField
    state: DeficiencyState

    @classmethod
    def zeros(cls, disc: Discretization) -> "Iterate":
        v = disc.zeros()
        v.far = np.zeros((disc.n, disc.modes_ext))
        return cls(v, disc.zeros(), DeficiencyState.zeros(disc.n, disc.dim))

    def norm(self, disc: Discretization, nu: float = 1.5) -> float:
        return mtilde_norm(disc, self.v, self.state.S, self.state.alpha, nu)


@dataclass
class NonlinearSolution:
    disc: Discretization
    approx: ApproxSolution
    v: WeightedField
    Lv: WeightedField
    S: np.ndarray
    alpha: np.ndarray
    residual_history: list
    step_norms: list
    contraction_factors: list
    linear_iterations: list
    zeta_norm: float
    C0: float
    min_u: float
    converged: bool
    nu: float = 1.5
    u: WeightedField = field(repr=False, default=None)
    model: ModelSolver | None = field(repr=False, default=None)

    @property
    def R(self) -> np.ndarray:
        # approx already carries the corrected parameters R + S, a + alpha
        return self.approx.config.R

    @property
    def a(self) -> np.ndarray:
        return self.approx.config.a

    @property
    def reduction(self) -> float:
        return self.zeta_norm / max(self.residual_history[-1], 1e-300)

    def summary(self) -> dict:
        cfg = self.approx.config
        return {
            "eps": cfg.eps,
            "rho": cfg.rho,
            "R_final": self.R.tolist(),
            "a_final": self.a.tolist(),
            "S": self.S.tolist(),
            "alpha": self.alpha.tolist(),
            "zeta_norm": self.zeta_norm,
            "residual_history": self.residual_history,
            "step_norms": self.step_norms,
            "contraction_factors": self.contraction_factors,
            "linear_iterations": self.linear_iterations,
            "reduction": self.reduction,
            "C0": self.C0,
            "min_u": self.min_u,
            "converged": self.converged,
        }


class NonlinearSolver:
    def __init__(self, disc: Discretization, approx: ApproxSolution, nu: float = 1.5,
                 model: ModelSolver | None = None, tol_linear: float = 1e-10, max_linear: int = 30):
        self.disc = disc
        self.approx = approx
        self.nu = nu
        self.problem = LinearizedProblem(disc, approx, model, nu)
        self.tol_linear, self.max_linear = tol_linear, max_linear
        N = disc.dim
        self.c = N * (N - 2) / 4
        self.p = (N + 2) / (N - 2)

    def residual(self, v: WeightedField, Lv: WeightedField, S, alpha):
        """N(w) on the nodes and the current u = ubar' + v."""
        cfg = self.approx.config
        ap = self.approx.with_params(cfg.R + S, cfg.a + alpha)
        ub, z = sample_approx(ap, self.disc, with_error=True)
        lap_v = Lv - self.problem.model.V * v
        u = ub + v
        if u.min() <= 0:
            raise PositivityError(f"u is not positive on the grid (min {u.min():.3e})")
        nonlin = WeightedField([_power_difference(a, b, self.p) for a, b in zip(ub.balls, v.balls)],
                               [_power_difference(a, b, self.p) for a, b in zip(ub.shells, v.shells)])
        return z + lap_v + nonlin * self.c, u

    def norm_source(self, f: WeightedField) -> float:
        return weighted_norm(self.disc.project(f), self.disc, self.nu - 2, 0, None)

    def picard_step(self, w: Iterate, res: WeightedField | None = None):
        """One step w -> w - Lambda~^{-1} N(w).  Returns the new iterate and the linear solve."""
        if res is None:
            res, _ = self.residual(w.v, w.Lv, w.state.S, w.state.alpha)
        lin = full_linearized_solve(self.problem, res, self.tol_linear, self.max_linear)
        nxt = Iterate(w.v - lin.v, w.Lv - lin.Lv,
                      DeficiencyState(w.state.S - lin.S, w.state.alpha - lin.alpha))
        return nxt, lin

    def solve(self, max_iter: int = 10, reduction: float = 1e3, tol: float = 1e-12,
              require_reduction: bool = False, C0_max: float | None = None) -> NonlinearSolution:
        """Iterate the Picard map.  `C0_max` bounds the ball ||w|| <= C0_max eps rho^2; an iterate
        leaving it is rejected with ConvergenceError."""
        disc = self.disc
        cfg = self.approx.config
        w = Iterate.zeros(disc)
        scale = cfg.eps * cfg.rho**2
        res, u = self.residual(w.v, w.Lv, w.state.S, w.state.alpha)
        zeta_norm = self.norm_source(res)
        history = [zeta_norm]
        steps, factors, lin_its = [], [], []
        C0 = 0.0
        for _ in range(max_iter):
            w_new, lin = self.picard_step(w, res)
            lin_its.append(len(lin.residuals))
            step = mtilde_norm(disc, lin.v, lin.S, lin.alpha, self.nu)
            if steps and steps[-1] > 0:
                factors.append(step / steps[-1])
            steps.append(step)
            size = w_new.norm(disc, self.nu) / scale
            if C0_max is not None and size > C0_max:
                raise ConvergenceError(f"iterate left the ball: |w|/(eps rho^2) = {size:.3e} > {C0_max:.3e}, "
                                       f"step factors {factors}", history)
            C0 = max(C0, size)
            w = w_new
            res, u = self.residual(w.v, w.Lv, w.state.S, w.state.alpha)
            history.append(self.norm_source(res))
            if history[-1] <= tol * zeta_norm:
                break
            # stop once the target is met and further steps no longer pay off
            if history[-1] <= zeta_norm / reduction and history[-1] > 0.5 * history[-2]:
                break
        converged = history[-1] <= zeta_norm / reduction
        if require_reduction and not converged:
            raise ConvergenceError(f"residual reduced only by {zeta_norm / history[-1]:.2e}", history)
        S, alpha = w.state.S, w.state.alpha
        return NonlinearSolution(disc, self.approx.with_params(cfg.R + S, cfg.a + alpha), w.v, w.Lv, S, alpha,
                                 history, steps, factors, lin_its, zeta_norm, C0, u.min(), converged, self.nu, u,
                                 self.problem.model)


ExactSolution = NonlinearSolution


def residual(solver: NonlinearSolver, state: DeficiencyState, v: WeightedField, Lv: WeightedField) -> WeightedField:
    """N(w) for w = (v, S, alpha); Lv is the image of v under the model operator."""
    return solver.residual(v, Lv, state.S, state.alpha)[0]


def picard_step(solver: NonlinearSolver, w: Iterate) -> Iterate:
    return solver.picard_step(w)[0]


def solve_nonlinear(disc: Discretization, approx: ApproxSolution, **kwargs) -> NonlinearSolution:
    opts = {k: kwargs.pop(k) for k in ("max_iter", "reduction", "tol", "require_reduction", "C0_max")
            if k in kwargs}
    return NonlinearSolver(disc, approx, **kwargs).solve(**opts)


def _rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def symmetry_defect(sol: NonlinearSolution, order: int | None = None) -> dict:
    """Relative defects under the rotation about the z-axis by 2 pi / order, which permutes the points
    of regular polygon configurations.  Componentwise values for S, alpha and v, and "w": the defect of
    the whole unknown (v, S, alpha) relative to its size, both measured in the M~ norm."""
    disc = sol.disc
    n = disc.n
    order = order or n
    Rot = _rotation_z(2 * math.pi / order)
    pts = disc.config.points
    perm = [int(np.argmin(np.linalg.norm(pts - Rot @ pts[k], axis=1))) for k in range(n)]
    if np.max(np.linalg.norm(pts[perm] - (Rot @ pts.T).T, axis=1)) > 1e-9:
        raise ValueError("configuration is not invariant under the rotation")
    dS = float(np.max(np.abs(sol.S[perm] - sol.S)) / max(np.max(np.abs(sol.S)), 1e-300))
    rot_alpha = (Rot @ sol.alpha.T).T
    dA = float(np.max(np.abs(sol.alpha[perm] - rot_alpha)) / max(np.max(np.abs(sol.alpha)), 1e-300))
    # v_{k+1}(Rot y) = v_k(y); the azimuth counts are multiples of 12 so Rot permutes the nodes
    def node_perm(quad):
        rotated = (Rot @ quad.points.T).T
        idx = np.array([int(np.argmin(np.linalg.norm(quad.points - p, axis=1))) for p in rotated])
        if np.max(np.linalg.norm(quad.points[idx] - rotated, axis=1)) > 1e-9:
            raise ValueError("angular nodes are not invariant under the rotation")
        return idx

    ib, is_ = node_perm(disc.ball_basis.quad), node_perm(disc.shell_basis.quad)
    diff = WeightedField([sol.v.balls[perm[k]][:, ib] - sol.v.balls[k] for k in range(n)],
                         [sol.v.shells[perm[k]][:, is_] - sol.v.shells[k] for k in range(n)])
    dv = weighted_norm(diff, disc, sol.nu, 1, None) / max(weighted_norm(sol.v, disc, sol.nu, 1, None), 1e-300)
    total = mtilde_norm(disc, sol.v, sol.S, sol.alpha, sol.nu)
    dw = mtilde_norm(disc, diff, sol.S[perm] - sol.S, sol.alpha[perm] - rot_alpha, sol.nu)
    return {"S": dS, "alpha": dA, "v": dv, "w": dw / max(total, 1e-300),
            "R_final": float(np.max(np.abs(sol.R[perm] - sol.R)) / np.max(np.abs(sol.R))),
            "a_final": float(np.max(np.abs(sol.a[perm] - (Rot @ sol.a.T).T)) / np.max(np.abs(sol.a)))}


@dataclass
class NondegeneracyReport:
    mu: float
    sigma_min: float
    singular_values: np.ndarray
    admissible_modes: int
    decay_rates: np.ndarray
    extra: dict = field(default_factory=dict)


def _radial_potential(sol: NonlinearSolution, i: int) -> np.ndarray:
    """Spherical mean of N(N+2)/4 u^{4/(N-2)} on ball i in cylindrical units (times r^2)."""
    disc = sol.disc
    N = disc.dim
    w = disc.ball_basis.quad.weights / (4 * math.pi)
    u4 = (N * (N + 2) / 4) * sol.u.balls[i] ** (4 / (N - 2))
    return np.exp(-2 * disc.t(i)) * (u4 @ w)


def nondegeneracy_spectrum(sol: NonlinearSolution, mu: float = 1.5, refine: int = 1) -> NondegeneracyReport:
    """Smallest singular value of the boundary reduction of the linearization at the computed
    solution on the weighted space with weight mu near the singular points.

    Inside each ball the potential is replaced by its spherical mean.  A mode admits a local
    solution of the required decay when its decay rate exceeds mu; for those modes the interior
    Dirichlet-to-Neumann value enters, the others are forced to vanish on the sphere.  The matrix
    (S - T) restricted to admissible columns, with column scaling 1/(l+1), is decomposed by SVD.
    `refine` subdivides the cylindrical grid for the convergence check.
    """
    disc = sol.disc
    L = disc.lmax
    m = n_modes(L)
    deg = mode_degrees(L)
    a = disc.a
    S = (sol.model or ModelSolver(disc)).S
    cols, T = [], np.zeros(disc.n * m)
    rates = np.zeros((disc.n, L + 1))
    for i, solver in enumerate(disc.ball_solvers):
        t = disc.t(i)
        P = _radial_potential(sol, i)
        if refine > 1:
            tf = np.linspace(t[0], t[-1], (len(t) - 1) * refine + 1)
            P = np.interp(tf, t, P)
            t = tf
        h = t[1] - t[0]
        period = solver.problems[0].orbit.period
        for l in range(L + 1):
            lam = l * (l + disc.dim - 2)
            q = a * a + lam - P
            if l == 0:
                delta = 0.0
            elif l == 1:
                delta = 1.0
            else:
                y = numerov_bvp(q, np.zeros(len(t)), h, 1.0, 0.0)
                k0 = int(round(period / h))
                delta = -math.log(abs(y[2 * k0]) / abs(y[k0])) / (k0 * h)
                dy0 = float(numerov_start_derivative(y, q, np.zeros(len(t)), h))
                T[i * m + np.nonzero(deg == l)[0]] = -a - dy0
            rates[i, l] = delta - a
            if delta - a > mu:
                cols += list(i * m + np.nonzero(deg == l)[0])
    cols = np.array(sorted(cols), dtype=int)
    A = S - np.diag(T)
    M = A[:, cols] / (np.tile(deg, disc.n)[cols] + 1.0)[None, :]
    sv = np.linalg.svd(M, compute_uv=False) if cols.size else np.zeros(0)
    return NondegeneracyReport(mu, float(sv[-1]) if sv.size else float("nan"), sv, int(cols.size), rates,
                               {"refine": refine})
