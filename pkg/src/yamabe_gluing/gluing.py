"""Global linear theory: exterior multipole solver, Dirichlet-to-Neumann matrices, the glued inverse
of the model operator and the Neumann iteration for the linearization about the approximate solution.

The model operator is
    L w = Lap w + (N(N+2)/4) sum_i chi~(|x - x_i|) u_i(R_i, 0, x - x_i)^{4/(N-2)} w,
with chi~ = 1 on the unit balls and 0 beyond radius 2.  Inside each unit ball the equation is solved
mode by mode (BallSolver); on R^N minus the balls by shell Newton potentials plus harmonic multipoles
(ExteriorSolver).  The two are glued along the unit spheres by matching Neumann data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .approx import ApproxSolution, smoothstep7
from .harmonics import COORDINATE_NORMALIZATION, SphereBasis, mode_degrees, n_modes, solid_harmonics
from .spaces import Discretization, WeightedField, evaluate_multipoles, symmetric_quadrature, weighted_norm

__all__ = [
    "GluingError",
    "shell_cutoff",
    "ExteriorSolver",
    "ExteriorField",
    "MultipoleExpansion",
    "DtNOperator",
    "dtn_operator",
    "exterior_solve",
    "dtn_exterior",
    "kernel_system_matrix",
    "ModelSolver",
    "GlobalLinearSolution",
    "glue_solve",
    "manufactured_field",
    "manufactured_error",
    "deficiency_to_parameters",
    "parameters_to_deficiency",
    "LinearizedProblem",
    "LinearizedSolution",
    "full_linearized_solve",
    "mtilde_norm",
    "sample_approx",
]


class GluingError(RuntimeError):
    """The discrete gluing system is (numerically) singular."""


def shell_cutoff(r):
    """chi~(r) = 1 - S(r - 1): one for r <= 1, zero for r >= 2; returns (chi, chi', chi'')."""
    S, dS, d2S = smoothstep7(np.asarray(r, dtype=float) - 1.0)
    return 1.0 - S, -dS, -d2S


def _delaunay_radial(disc: Discretization, i: int, r):
    """u_i(R_i, 0, r) and the Jacobi profile helpers on arbitrary radii."""
    solver = disc.ball_solvers[i]
    orbit = solver.problems[0].orbit
    s = -np.log(r) + math.log(solver.R)
    v, vd = orbit.evaluate(s)
    return s, v, vd, orbit.accel(v)


def _deficiency_radial(disc: Discretization, i: int, degree: int, r):
    """Mode function B(t) at t = -log r and dB/dt, consistent with BallSolver.basis."""
    solver = disc.ball_solvers[i]
    a = disc.a
    s, v, vd, vdd = _delaunay_radial(disc, i, r)
    if degree == 0:
        phi, dphi = vd, vdd
    else:
        phi = np.exp(-s) * (a * v - vd)
        dphi = -phi + np.exp(-s) * (a * vd - vdd)
    sc = solver.R**a * COORDINATE_NORMALIZATION[degree] / solver.eps
    return sc * phi, sc * dphi


# -- exterior ----------------------------------------------------------------------------------

@dataclass
class ExteriorField:
    """Solution outside the unit balls.  Arrays carry a trailing column axis.

    newton[i]: own shell Newton potential modes on the shell radii, (n_r, m_ext, k)
    inner[i]: multipole coefficients of the harmonic part chosen by the Dirichlet solve, (m_ext, k)
    far: total multipole coefficients valid beyond the shells, (n, m_ext, k)
    shells[i]: values on shell nodes, (n_r, n_ang, k)
    trace, neumann: modes on the unit spheres, (n, m_ext, k)
    """

    newton: list
    inner: np.ndarray
    far: np.ndarray
    shells: list
    trace: np.ndarray
    neumann: np.ndarray
    born_iterations: int = 0


@dataclass
class MultipoleExpansion:
    """Harmonic field sum_i sum_lm c[i, lm] |x - x_i|^{-1-l} Y_lm((x - x_i)/|x - x_i|)."""

    config: object
    coeffs: np.ndarray
    lmax: int

    def __call__(self, x) -> np.ndarray:
        return evaluate_multipoles(self.config, self.coeffs, np.asarray(x, dtype=float), self.lmax)


@dataclass
class DtNOperator:
    """Dirichlet-to-Neumann matrix over (point, mode) with its flavor: "S", "S0", "T" or "S-T"."""

    matrix: np.ndarray
    flavor: str

    @property
    def sigma_min(self) -> float:
        return float(np.linalg.svd(self.matrix, compute_uv=False)[-1])

    @property
    def symmetry_defect(self) -> float:
        M = self.matrix
        return float(np.max(np.abs(M - M.T)) / np.max(np.abs(M)))


class ExteriorSolver:
    """Lap w + V w = f outside the unit balls, w = psi on the unit spheres, w -> 0 at infinity.

    V = c' chi~ u_i^4 on the shells.  Sources are represented on the shells only; the potential is
    handled by Born iteration (V is O(eps^4) there so a few sweeps reach round-off).
    """

    def __init__(self, disc: Discretization, with_potential: bool = True, born_tol: float = 1e-14,
                 max_born: int = 10):
        self.disc = disc
        cfg = disc.config
        self.n = cfg.n
        self.lext = disc.lext
        self.m = n_modes(disc.lext)
        self.deg = mode_degrees(disc.lext)
        self.r = disc.shell_r
        self.Q = disc.shell_Q
        self.basis = disc.shell_basis
        self.with_potential = with_potential
        self.born_tol, self.max_born = born_tol, max_born
        proj = SphereBasis(self.lext, symmetric_quadrature(self.lext, self.lext + 8))
        n, m = self.n, self.m
        self.X = np.zeros((n, n, m, m))
        self.E = {}
        for i in range(n):
            pts = cfg.points[i] + proj.quad.points
            shell_pts = (cfg.points[i] + disc.shell_offsets(i)).reshape(-1, 3)
            for k in range(n):
                if k == i:
                    continue
                vals = solid_harmonics(self.lext, pts - cfg.points[k], exterior=True)
                self.X[i, k] = proj.decompose(vals.T).T
                self.E[i, k] = solid_harmonics(self.lext, shell_pts - cfg.points[k], exterior=True)
        big = np.eye(n * m)
        for i in range(n):
            for k in range(n):
                if k != i:
                    big[i * m:(i + 1) * m, k * m:(k + 1) * m] = self.X[i, k]
        self.dirichlet_lu = linalg.lu_factor(big)
        chi, _, _ = shell_cutoff(self.r)
        self.V = []
        c4 = disc.dim * (disc.dim + 2) / 4
        for i in range(n):
            _, v, _, _ = _delaunay_radial(disc, i, self.r)
            u = self.r ** (-disc.a) * v
            self.V.append(c4 * chi * u ** (4 / (disc.dim - 2)))

    def _newton(self, h):
        """Own Newton potential of shell source modes h (n_r, m, k)."""
        r = self.r[:, None, None]
        l = self.deg[None, :, None]
        A = np.tensordot(self.Q, r ** (l + 2) * h, axes=1)
        Bc = np.tensordot(self.Q, r ** (1 - l) * h, axes=1)
        Bint = Bc[-1][None] - Bc
        u = -(r ** (-l - 1) * A + r**l * Bint) / (2 * l + 1)
        M = -A[-1] / (2 * self.deg[:, None] + 1)
        return u, M

    def _solve_once(self, src_modes, psi):
        n, m = self.n, self.m
        k = psi.shape[-1]
        newton = []
        tau = np.zeros((n, m, k))
        M = np.zeros((n, m, k))
        for i in range(n):
            if src_modes is None:
                u = np.zeros((len(self.r), m, k))
            else:
                u, M[i] = self._newton(src_modes[i])
            newton.append(u)
            tau[i] = u[0]
        rhs = psi - tau
        for i in range(n):
            for kk in range(n):
                if kk != i:
                    rhs[i] -= self.X[i, kk] @ M[kk]
        c = linalg.lu_solve(self.dirichlet_lu, rhs.reshape(n * m, k)).reshape(n, m, k)
        far = c + M
        l = self.deg[:, None]
        neumann = np.empty((n, m, k))
        trace = np.empty((n, m, k))
        for i in range(n):
            other = np.zeros((m, k))
            for kk in range(n):
                if kk != i:
                    other += self.X[i, kk] @ far[kk]
            neumann[i] = l * tau[i] - (l + 1) * c[i] + l * other
            trace[i] = tau[i] + c[i] + other
        shells = []
        rr = self.r[:, None, None]
        for i in range(n):
            own = newton[i] + c[i][None] * rr ** (-self.deg[None, :, None] - 1)
            vals = np.matmul(self.basis.Y, own)
            for kk in range(n):
                if kk != i:
                    vals += (self.E[i, kk] @ far[kk]).reshape(len(self.r), -1, k)
            shells.append(vals)
        return ExteriorField(newton, c, far, shells, trace, neumann)

    def solve(self, src=None, psi=None) -> ExteriorField:
        """src: list of (n_r, n_ang[, k]) shell samples or None; psi: (n, m_psi[, k]) sphere data."""
        n, m = self.n, self.m
        squeeze = False
        if psi is None:
            k = 1 if src is None or src[0].ndim == 2 else src[0].shape[-1]
            psi_full = np.zeros((n, m, k))
            squeeze = src is None or src[0].ndim == 2
        else:
            psi = np.asarray(psi, dtype=float)
            if psi.ndim == 2:
                psi = psi[..., None]
                squeeze = True
            k = psi.shape[-1]
            psi_full = np.zeros((n, m, k))
            psi_full[:, : psi.shape[1]] = psi
        if src is not None:
            src = [s[..., None] if s.ndim == 2 else s for s in src]
            src_modes = [np.matmul(self.basis.analysis, s) for s in src]
        else:
            src_modes = None
        field_ = self._solve_once(src_modes, psi_full)
        it = 0
        if self.with_potential:
            while it < self.max_born:
                it += 1
                corr = [np.matmul(self.basis.analysis, self.V[i][:, None, None] * field_.shells[i])
                        for i in range(n)]
                eff = [(src_modes[i] if src_modes is not None else 0.0) - corr[i] for i in range(n)]
                new = self._solve_once(eff, psi_full)
                scale = max(max(np.max(np.abs(s)) for s in new.shells), 1e-300)
                change = max(np.max(np.abs(a - b)) for a, b in zip(new.shells, field_.shells))
                field_ = new
                if change <= self.born_tol * scale:
                    break
        field_.born_iterations = it
        if squeeze:
            field_ = ExteriorField([u[..., 0] for u in field_.newton], field_.inner[..., 0], field_.far[..., 0],
                                   [s[..., 0] for s in field_.shells], field_.trace[..., 0],
                                   field_.neumann[..., 0], it)
        return field_

    def dtn_matrix(self, lmax: int) -> np.ndarray:
        """Exterior Dirichlet-to-Neumann matrix on modes up to lmax, rows/cols ordered (ball, mode)."""
        m = n_modes(lmax)
        cols = self.n * m
        psi = np.zeros((self.n, m, cols))
        for c in range(cols):
            psi[c // m, c % m, c] = 1.0
        f = self.solve(None, psi)
        return f.neumann[:, :m, :].reshape(cols, cols)


def exterior_solve(disc: Discretization, src=None, psi=None, with_potential: bool = True) -> ExteriorField:
    return ExteriorSolver(disc, with_potential).solve(src, psi)


def dtn_exterior(disc: Discretization, with_potential: bool = True) -> np.ndarray:
    """S_0 (with_potential=False) or S on modes up to disc.lmax."""
    return ExteriorSolver(disc, with_potential).dtn_matrix(disc.lmax)


def dtn_operator(disc: Discretization, flavor: str = "S-T", with_potential: bool = True) -> DtNOperator:
    """Assembled DtN matrix: exterior "S", interior (diagonal) "T" or the gluing matrix "S-T"."""
    if flavor == "T":
        return DtNOperator(np.diag(np.concatenate([s.dtn for s in disc.ball_solvers])), "T")
    S = dtn_exterior(disc, with_potential)
    if flavor == "S":
        return DtNOperator(S, "S" if with_potential else "S0")
    if flavor == "S-T":
        return DtNOperator(S - np.diag(np.concatenate([s.dtn for s in disc.ball_solvers])), "S-T")
    raise ValueError(f"unknown DtN flavor {flavor!r}")


def kernel_system_matrix(config) -> np.ndarray:
    """Matrix of the linear system on the radial coefficients p_i whose null space describes the
    radial part of the kernel of S_0 - T_0 in the small necksize limit:
    p_i0 + sum_{i != i0} R_i0^{N-2} |x_i - x_i0|^{2-N} p_i = 0."""
    N = config.dim
    d = np.linalg.norm(config.points[:, None] - config.points[None], axis=-1)
    n = config.n
    M = np.eye(n)
    off = ~np.eye(n, dtype=bool)
    M[off] = (config.R[:, None] ** (N - 2) * np.where(off, d, 1.0) ** (2 - N))[off]
    return M


# -- glued model inverse ------------------------------------------------------------------------

@dataclass
class GlobalLinearSolution:
    """w = v + sum_i sum_j K[i, j] chi~ B_ij with v in the weighted space.

    ball_modes[i]: mode functions of v in ball i (n_t, m); K: (n, N+1); psi: interface data (n, m);
    v, Lv: node fields of v and of L v; jumps: Dirichlet/Neumann mismatch on the unit spheres.
    """

    ball_modes: list
    K: np.ndarray
    psi: np.ndarray
    v: WeightedField
    Lv: WeightedField
    jumps: dict = field(default_factory=dict)


def deficiency_to_parameters(disc: Discretization, K: np.ndarray):
    """(S_i, alpha_i) with K^0 chi~ B_0 = S_i chi~ d/dR u and K^j chi~ B_j = alpha^j chi~ d/da^j u."""
    cfg = disc.config
    a = disc.a
    S = K[:, 0] * cfg.R ** (a + 1) / cfg.eps_i
    alpha = K[:, 1:] * (cfg.R ** (a - 1) / cfg.eps_i)[:, None]
    return S, alpha


def parameters_to_deficiency(disc: Discretization, S, alpha) -> np.ndarray:
    cfg = disc.config
    a = disc.a
    K = np.empty((cfg.n, cfg.dim + 1))
    K[:, 0] = np.asarray(S) * cfg.eps_i / cfg.R ** (a + 1)
    K[:, 1:] = np.asarray(alpha) * (cfg.eps_i / cfg.R ** (a - 1))[:, None]
    return K


class ModelSolver:
    """Inverse of the model operator with deficiency extension, assembled once per discretization."""

    def __init__(self, disc: Discretization, with_potential: bool = True, mu: float = 1.5,
                 singular_tol: float = 1e-10):
        self.disc = disc
        self.mu = mu
        self.ext = ExteriorSolver(disc, with_potential)
        L = disc.lmax
        self.m = n_modes(L)
        self.S = self.ext.dtn_matrix(L)
        self.T = np.concatenate([s.dtn for s in disc.ball_solvers])
        A = self.S - np.diag(self.T)
        sv = np.linalg.svd(A, compute_uv=False)
        self.sigma_min = float(sv[-1])
        if self.sigma_min < singular_tol * sv[0]:
            raise GluingError(f"S - T is singular to tolerance (sigma_min {self.sigma_min:.3e})")
        self.lu = linalg.lu_factor(A)
        N = disc.dim
        self.n_def = N + 1
        # chi~ B_j on the shells and its image under the model operator
        r = disc.shell_r
        chi, dchi, d2chi = shell_cutoff(r)
        lap_chi = d2chi + (N - 1) / r * dchi
        Y = disc.shell_basis.Y
        self.shell_def = []
        self.shell_Ldef = []
        c4 = N * (N + 2) / 4
        for i in range(disc.n):
            _, v, _, _ = _delaunay_radial(disc, i, r)
            u4 = (r ** (-disc.a) * v) ** (4 / (N - 2))
            vals, Lvals = [], []
            for j in range(self.n_def):
                deg = 0 if j == 0 else 1
                B, dB = _deficiency_radial(disc, i, deg, r)
                Bx = r ** (-disc.a) * B
                dBx = r ** (-disc.a - 1) * (-disc.a * B - dB)
                prof = chi * Bx
                Lprof = c4 * chi * (chi - 1) * u4 * Bx + 2 * dchi * dBx + lap_chi * Bx
                vals.append(np.outer(prof, Y[:, j]))
                Lvals.append(np.outer(Lprof, Y[:, j]))
            self.shell_def.append(np.stack(vals))
            self.shell_Ldef.append(np.stack(Lvals))
        # model potential on the nodes
        self.V = disc.zeros()
        for i, s in enumerate(disc.ball_solvers):
            P = s.potential
            self.V.balls[i] = np.repeat((np.exp(2 * s.t) * P)[:, None], disc.ball_basis.quad.size, axis=1)
            self.V.shells[i] = np.repeat(self.ext.V[i][:, None], disc.shell_basis.quad.size, axis=1)

    def deficiency_field(self, K: np.ndarray) -> WeightedField:
        """sum K chi~ B on the nodes (balls and shells)."""
        disc = self.disc
        f = disc.zeros()
        for i, s in enumerate(disc.ball_solvers):
            modes = np.zeros((len(s.t), self.m))
            Bm = s.deficiency_mode_functions()
            modes[:, : self.n_def] = Bm * K[i][None, :]
            f.balls[i] = disc.ball_modes_to_values(i, modes)
            f.shells[i] = np.einsum("j,jap->ap", K[i], self.shell_def[i])
        return f

    def deficiency_image(self, K: np.ndarray) -> WeightedField:
        """L(sum K chi~ B): zero in the balls, cutoff terms on the shells."""
        disc = self.disc
        f = disc.zeros()
        for i in range(disc.n):
            f.shells[i] = np.einsum("j,jap->ap", K[i], self.shell_Ldef[i])
        return f

    def solve(self, f: WeightedField) -> GlobalLinearSolution:
        disc = self.disc
        n, m = disc.n, self.m
        # particular solutions with zero interface data
        interior = []
        N_int = np.empty((n, m))
        ball_src = []
        for i, s in enumerate(disc.ball_solvers):
            F = disc.ball_values_to_source_modes(i, f.balls[i])
            ball_src.append(F)
            sol = s.solve(F, self.mu)
            interior.append(sol)
            N_int[i] = sol.neumann
        shell_src = [disc.shell_basis.recompose(disc.shell_basis.decompose(sv, disc.lext)) for sv in f.shells]
        ext = self.ext.solve(shell_src, None)
        N_ext = ext.neumann[:, :m]
        psi = linalg.lu_solve(self.lu, (N_int - N_ext).ravel()).reshape(n, m)
        hom = self.ext.solve(None, psi)
        K = np.empty((n, self.n_def))
        v = disc.zeros()
        modes_out = []
        N_in_tot = np.empty((n, m))
        for i, s in enumerate(disc.ball_solvers):
            Wh, Kh, Gh = s.homogeneous(psi[i])
            K[i] = interior[i].K + Kh
            G = interior[i].G + Gh
            modes_out.append(G)
            v.balls[i] = disc.ball_modes_to_values(i, G)
            N_in_tot[i] = interior[i].neumann + psi[i] * s.dtn
        w_shell = [a + b for a, b in zip(ext.shells, hom.shells)]
        for i in range(n):
            v.shells[i] = w_shell[i] - np.einsum("j,jap->ap", K[i], self.shell_def[i])
        v.far = ext.far + hom.far
        Lv = disc.zeros()
        for i in range(n):
            Lv.balls[i] = disc.ball_basis.recompose(disc.ball_basis.decompose(f.balls[i], disc.lmax))
            Lv.shells[i] = shell_src[i] - np.einsum("j,jap->ap", K[i], self.shell_Ldef[i])
        N_ext_tot = ext.neumann[:, :m] + hom.neumann[:, :m]
        jumps = {
            "dirichlet": float(np.max(np.abs(hom.trace[:, :m] + ext.trace[:, :m] - psi))),
            "neumann": float(np.max(np.abs(N_in_tot - N_ext_tot))),
            "born_iterations": int(max(ext.born_iterations, hom.born_iterations)),
        }
        return GlobalLinearSolution(modes_out, K, psi, v, Lv, jumps)


def glue_solve(disc: Discretization, f: WeightedField, mu: float = 1.5, with_potential: bool = True):
    return ModelSolver(disc, with_potential, mu).solve(f)


def _bump(r, lo: float, hi: float, k: int):
    """4^k (x(1-x))^k with x = (r - lo)/(hi - lo) on [lo, hi], zero outside, and two r-derivatives."""
    P = np.polynomial.Polynomial([0.0, 4.0, -4.0]) ** k
    h = hi - lo
    x = np.clip((r - lo) / h, 0.0, 1.0)
    inside = (r > lo) & (r < hi)
    return [np.where(inside, d(x), 0.0) / h**o for o, d in enumerate((P, P.deriv(), P.deriv(2)))]


def manufactured_field(disc: Discretization, model: ModelSolver, seed: int = 0, terms: int = 2,
                       lo: float = 0.2, hi: float = 2.0, k: int = 6):
    """A smooth g supported in lo <= |x - x_i| <= hi (vanishing near the singular points, with all
    low derivatives zero at r = hi) built from random modes of degree <= lmax, and f = L g."""
    rng = np.random.default_rng(seed)
    deg = mode_degrees(disc.lmax)
    g, f = disc.zeros(), disc.zeros()
    for i in range(disc.n):
        modes = rng.choice(len(deg), size=terms, replace=False)
        coef = rng.uniform(-1.0, 1.0, size=terms)
        for region, r, Y in (("balls", np.exp(-disc.t(i)), disc.ball_basis.Y),
                             ("shells", disc.shell_r, disc.shell_basis.Y)):
            p0, p1, p2 = _bump(r, lo, hi, k)
            for j, c in zip(modes, coef):
                l = deg[j]
                gv = c * np.outer(p0, Y[:, j])
                lap = c * np.outer(p2 + (disc.dim - 1) / r * p1 - l * (l + disc.dim - 2) / r**2 * p0, Y[:, j])
                getattr(g, region)[i][:] += gv
                getattr(f, region)[i][:] += lap + getattr(model.V, region)[i] * gv
    return g, f


def manufactured_error(disc: Discretization, model: ModelSolver, g: WeightedField,
                       sol: GlobalLinearSolution) -> float:
    """Relative recovery error: v against g on all nodes, and the deficiency part sum_j K_j chi~ B_j,
    which must vanish, measured by its size on the unit spheres."""
    err = max(np.max(np.abs(a - b)) for a, b in zip(sol.v.balls + sol.v.shells, g.balls + g.shells))
    shell_def = model.deficiency_field(sol.K).shells
    err = max(err, max(np.max(np.abs(s)) for s in shell_def))
    return float(err / g.max_abs())


# -- linearization about the approximate solution --------------------------------------------------

def _outer_rows(disc: Discretization, i: int) -> np.ndarray:
    """Ball rows with |x - x_i| > rho_i, where the error term can be non-zero."""
    t = disc.t(i)
    return np.nonzero(t < -math.log(disc.config.rho_i[i]) + 1e-9)[0]


def sample_approx(approx: ApproxSolution, disc: Discretization, with_error: bool = False,
                  outer_only: bool = False):
    """ubar (and zeta) on the nodes.  outer_only restricts ball rows to |x - x_i| > rho_i; other rows are 0."""
    u = disc.zeros()
    z = disc.zeros() if with_error else None
    cfg = disc.config
    for i in range(disc.n):
        rows = _outer_rows(disc, i) if outer_only else np.arange(len(disc.t(i)))
        y = disc.ball_offsets(i, rows)
        res = approx.evaluate(y, anchor=i, with_error=with_error)
        if with_error:
            u.balls[i][rows], z.balls[i][rows] = res
        else:
            u.balls[i][rows] = res
        y = disc.shell_offsets(i)
        res = approx.evaluate(y, anchor=i, with_error=with_error)
        if with_error:
            u.shells[i], z.shells[i] = res
        else:
            u.shells[i] = res
    # beyond the shells ubar = wbar: monopoles
    N = cfg.dim
    u.far = np.zeros((cfg.n, disc.modes_ext))
    u.far[:, 0] = approx.wbar_coeff * COORDINATE_NORMALIZATION[0]
    if N != 3:
        u.far = None
    return (u, z) if with_error else u


def mtilde_norm(disc: Discretization, v: WeightedField, S, alpha, nu: float = 1.5) -> float:
    """rho^nu |v|_{nu} + eps sum|S_i| + eps rho sum|alpha_i|."""
    cfg = disc.config
    return float(cfg.rho**nu * weighted_norm(v, disc, nu, 1) + cfg.eps * np.sum(np.abs(S))
                 + cfg.eps * cfg.rho * np.sum(np.abs(alpha)))


@dataclass
class LinearizedSolution:
    v: WeightedField
    Lv: WeightedField
    S: np.ndarray
    alpha: np.ndarray
    residuals: list
    factors: list
    norm: float


class LinearizedProblem:
    """Lambda~ (v, S, alpha) = Lambda v + sum S_i Lambda mu_i + alpha_i Lambda gamma_i, where Lambda is
    the linearization at ubar(R, a) and mu_i, gamma_i are the parameter derivatives of ubar."""

    def __init__(self, disc: Discretization, approx: ApproxSolution, model: ModelSolver | None = None,
                 nu: float = 1.5, fd_step: float = 1e-4):
        self.disc = disc
        self.approx = approx
        self.model = model or ModelSolver(disc, mu=nu)
        self.nu = nu
        self.fd_step = fd_step
        cfg = disc.config
        N = cfg.dim
        self.c5 = N * (N + 2) / 4
        self.ex = 4 / (N - 2)
        self.approx0 = approx.with_params(a=np.zeros_like(cfg.a))
        self.ubar = sample_approx(approx, disc)
        ub0 = sample_approx(self.approx0, disc, outer_only=False)
        self.A = self.ubar.map(lambda u: self.c5 * u**self.ex) - self.model.V
        self.A0 = ub0.map(lambda u: self.c5 * u**self.ex) - self.model.V
        # inside rho_i both potentials equal the model one up to the displacement of u_i
        for i in range(disc.n):
            inner = np.setdiff1d(np.arange(len(disc.t(i))), _outer_rows(disc, i))
            self.A0.balls[i][inner] = 0.0

    def _direction(self, base: ApproxSolution, S, alpha, with_error: bool):
        """Central differences of ubar (and zeta) along (S, alpha) at the parameters of `base`."""
        cfg = base.config
        scale = max(np.max(np.abs(S) / cfg.R), np.max(np.abs(alpha)) if np.size(alpha) else 0.0, 1e-300)
        h = self.fd_step / scale
        plus = base.with_params(cfg.R + h * S, cfg.a + h * alpha)
        minus = base.with_params(cfg.R - h * S, cfg.a - h * alpha)
        up = sample_approx(plus, self.disc, with_error, outer_only=True)
        um = sample_approx(minus, self.disc, with_error, outer_only=True)
        if with_error:
            du = (up[0] - um[0]) * (1 / (2 * h))
            dz = (up[1] - um[1]) * (1 / (2 * h))
            return du, dz
        return (up - um) * (1 / (2 * h))

    def apply_deficiency(self, S, alpha) -> WeightedField:
        """Lambda applied to sum S_i mu_i + alpha_i gamma_i, i.e. the derivative of zeta."""
        if not (np.any(S) or np.any(alpha)):
            return self.disc.zeros()
        return self._direction(self.approx, S, alpha, True)[1]

    def apply(self, v: WeightedField, Lv: WeightedField, S, alpha) -> WeightedField:
        return Lv + self.A * v + self.apply_deficiency(S, alpha)

    def precondition(self, r: WeightedField):
        """Model inverse followed by the change of deficiency coordinates at a = 0."""
        disc = self.disc
        sol = self.model.solve(r)
        dS, dalpha = deficiency_to_parameters(disc, sol.K)
        chiB = self.model.deficiency_field(sol.K)
        LchiB = self.model.deficiency_image(sol.K)
        if np.any(dS) or np.any(dalpha):
            D0, dz0 = self._direction(self.approx0, dS, dalpha, True)
        else:
            D0, dz0 = disc.zeros(), disc.zeros()
        corr = chiB - D0
        Lcorr = LchiB - (dz0 - self.A0 * D0)
        for i in range(disc.n):
            inner = np.setdiff1d(np.arange(len(disc.t(i))), _outer_rows(disc, i))
            corr.balls[i][inner] = 0.0
            Lcorr.balls[i][inner] = 0.0
        dv = sol.v + corr
        dLv = sol.Lv + Lcorr
        # beyond the shells D0 is the monopole part of d wbar
        cfg = disc.config
        far = np.zeros((cfg.n, disc.modes_ext))
        far[:, 0] = -(0.5 * cfg.eps_i * disc.a * cfg.R ** (disc.a - 1) * dS) * COORDINATE_NORMALIZATION[0]
        dv.far = (sol.v.far if sol.v.far is not None else 0.0) + far
        return dv, dLv, dS, dalpha, sol


def full_linearized_solve(problem: LinearizedProblem, f: WeightedField, tol: float = 1e-10,
                          max_iter: int = 30) -> LinearizedSolution:
    """Solve Lambda~ w = f by the preconditioned Neumann iteration w += P (f - Lambda~ w)."""
    disc = problem.disc
    nu = problem.nu
    f = disc.project(f)
    v = disc.zeros()
    v.far = np.zeros((disc.n, disc.modes_ext))
    Lv = disc.zeros()
    S = np.zeros(disc.n)
    alpha = np.zeros((disc.n, disc.dim))
    r = f
    f_norm = weighted_norm(f, disc, nu - 2, 0, None)
    residuals, factors = [], []
    prev = None
    total = 0.0
    for _ in range(max_iter):
        dv, dLv, dS, dalpha, _ = problem.precondition(r)
        v = v + dv
        Lv = Lv + dLv
        S = S + dS
        alpha = alpha + dalpha
        step = mtilde_norm(disc, dv, dS, dalpha, nu)
        total = mtilde_norm(disc, v, S, alpha, nu)
        if prev is not None and prev > 0:
            factors.append(step / prev)
        prev = step
        r = disc.project(f - problem.apply(v, Lv, S, alpha))
        residuals.append(weighted_norm(r, disc, nu - 2, 0, None) / max(f_norm, 1e-300))
        if step <= tol * max(total, 1e-300) or residuals[-1] <= tol:
            break
        if len(residuals) > 1 and residuals[-1] > 0.5 * residuals[-2]:
            break  # round-off floor
    return LinearizedSolution(v, Lv, S, alpha, residuals, factors, total)
