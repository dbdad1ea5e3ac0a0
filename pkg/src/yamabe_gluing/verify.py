"""Acceptance checks.  Each check returns a CheckResult carrying the measured value, the tolerance it
was compared against and the runtime; `run_checks` runs a selection and shares expensive state."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .approx import build_approx
from .balance import PRESETS, make_configuration, preset_points
from .delaunay import DelaunayParams, cylinder_necksize, integrate_orbit, period
from .gluing import (
    ModelSolver,
    deficiency_to_parameters,
    kernel_system_matrix,
    manufactured_error,
    manufactured_field,
    mtilde_norm,
    sample_approx,
)
from .interior import MODE_GRID, interior_dtn, interior_dtn_limit, make_mode_problem, solve_mode_high, solve_mode_low
from .nonlinear import nondegeneracy_spectrum, solve_nonlinear, symmetry_defect
from .spaces import Discretization

__all__ = ["CheckResult", "VerifyContext", "CHECKS", "run_checks"]

# sigma_min of I + (1/2)(J - I) for the balanced equilateral triangle: eigenvalues 2, 1/2, 1/2
TRIANGLE_KERNEL_SIGMA = 0.5


@dataclass
class CheckResult:
    criterion: int
    name: str
    value: float
    tolerance: float
    passed: bool
    details: dict = field(default_factory=dict)
    runtime: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag} criterion {self.criterion:2d} {self.name}: value={self.value:.6g} "
                f"tol={self.tolerance:.6g} ({self.runtime:.1f} s)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["details"] = _jsonable(self.details)
        return d


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


@dataclass
class VerifyContext:
    """Shared settings and lazily built state (the triangle solution feeds several checks)."""

    preset: str = "triangle-N3"
    eps: float | None = None
    lmax: int = 8
    tgrid_per_period: int = 2048
    tol_energy: float = 1e-9
    tol_linear: float = 1e-10
    max_iter: int = 10
    seed: int = 0
    sizing: dict = field(default_factory=dict)
    _solution: object = field(default=None, repr=False)
    _solution_time: float = 0.0

    def config(self, eps: float | None = None):
        pts, q, dim = preset_points(self.preset)
        e = eps if eps is not None else (self.eps if self.eps is not None else PRESETS[self.preset]["eps"])
        return make_configuration(pts, q, e, dim)

    def disc(self, cfg):
        return Discretization(cfg, lmax=self.lmax, tgrid_per_period=self.tgrid_per_period)

    def solution(self):
        if self._solution is None:
            t0 = time.perf_counter()
            cfg = self.config()
            self._solution = solve_nonlinear(self.disc(cfg), build_approx(cfg), max_iter=self.max_iter,
                                             tol_linear=self.tol_linear)
            self._solution_time = time.perf_counter() - t0
        return self._solution


def _timed(fn):
    def wrapper(ctx: VerifyContext) -> CheckResult:
        t0 = time.perf_counter()
        res = fn(ctx)
        res.runtime = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def check_energy(ctx: VerifyContext) -> CheckResult:
    """Energy drift over five periods for N in {3, 4, 6}, eps in {1e-2, 1e-3}; total runtime under 10 s."""
    t0 = time.perf_counter()
    drifts = {}
    for N in (3, 4, 6):
        for eps in (1e-2, 1e-3):
            drifts[f"N={N},eps={eps:g}"] = integrate_orbit(DelaunayParams(N, eps), n_periods=5).energy_drift()
    elapsed = time.perf_counter() - t0
    worst = max(drifts.values())
    return CheckResult(1, "delaunay energy drift", worst, ctx.tol_energy,
                       worst <= ctx.tol_energy and elapsed < 10.0, {"drifts": drifts, "seconds": elapsed,
                                                                    "runtime_limit": 10.0})


@_timed
def check_profile_bounds(ctx: VerifyContext) -> CheckResult:
    """eps <= v(t) <= eps cosh((N-2)t/2) at every node with |t| <= T/2 (the orbit is even in t)."""
    violations = {}
    for N in (3, 4, 6):
        a = (N - 2) / 2
        for eps in (1e-2, 1e-3):
            orb = integrate_orbit(DelaunayParams(N, eps))
            keep = orb.t_grid <= orb.period / 2
            t, v = orb.t_grid[keep], orb.v[keep]
            violations[f"N={N},eps={eps:g}"] = int(np.sum(v < eps) + np.sum(v > eps * np.cosh(a * t)))
    total = sum(violations.values())
    return CheckResult(2, "delaunay profile bounds", total, 0, total == 0, {"violations": violations})


@_timed
def check_period_asymptotics(ctx: VerifyContext) -> CheckResult:
    """T_{eps/10} - T_eps against (4/(N-2)) log 10 for eps <= 1e-4, and strict monotonicity of T."""
    t0 = time.perf_counter()
    rel = {}
    monotone = {}
    for N in (3, 4):
        target = 4 / (N - 2) * math.log(10)
        for eps in (1e-4, 1e-5):
            gap = period(DelaunayParams(N, eps / 10)) - period(DelaunayParams(N, eps))
            rel[f"N={N},eps={eps:g}"] = abs(gap / target - 1)
        grid = np.geomspace(1e-6, 0.9 * cylinder_necksize(N), 10)
        T = np.array([period(DelaunayParams(N, e)) for e in grid])
        monotone[f"N={N}"] = bool(np.all(np.diff(T) < 0))
    elapsed = time.perf_counter() - t0
    worst = max(rel.values())
    ok = worst <= 0.05 and all(monotone.values()) and elapsed < 5.0
    return CheckResult(3, "period asymptotics", worst, 0.05, ok,
                       {"relative_gap_error": rel, "strictly_decreasing_in_eps": monotone, "seconds": elapsed,
                        "runtime_limit": 5.0})


@_timed
def check_profile_constant(ctx: VerifyContext) -> CheckResult:
    """sup_{0<=t<=0.4T} |v - eps cosh(at)| / (eps^p e^{(N+2)t/2}); successive-eps ratios within a factor 2."""
    ratios = {}
    consts = {}
    for N in (3, 4, 6):
        a, p = (N - 2) / 2, (N + 2) / (N - 2)
        vals = []
        for eps in (1e-2, 3e-3, 1e-3):
            orb = integrate_orbit(DelaunayParams(N, eps))
            keep = orb.t_grid <= 0.8 * orb.period / 2
            t, v = orb.t_grid[keep], orb.v[keep]
            vals.append(float(np.max(np.abs(v - eps * np.cosh(a * t)) / (eps**p * np.exp((N + 2) * t / 2)))))
        consts[f"N={N}"] = vals
        r = [max(x, y) / min(x, y) for x, y in zip(vals, vals[1:])]
        ratios[f"N={N}"] = max(r)
    worst = max(ratios.values())
    return CheckResult(4, "profile remainder constant", worst, 2.0, worst < 2.0,
                       {"constants": consts, "max_successive_ratio": ratios})


@_timed
def check_balancing(ctx: VerifyContext) -> CheckResult:
    """Closed forms for the equilateral triangle and the pair, and the balancing residual on all presets."""
    t0 = time.perf_counter()
    errs = {}
    for N in (3, 4, 5):
        d = 6.0
        tri = np.array([[0.0, 0.0], [d, 0.0], [d / 2, d * math.sqrt(3) / 2]])
        pts = np.zeros((3, N))
        pts[:, :2] = tri - tri.mean(axis=0)
        cfg = make_configuration(pts, np.ones(3), 1e-2, N, check=False)
        R_exact = (d ** (N - 2) / 2) ** (1 / (N - 2))
        a_exact = -(3 / (2 * d * d)) * pts
        errs[f"triangle N={N} R"] = float(np.max(np.abs(cfg.R - R_exact)) / R_exact)
        errs[f"triangle N={N} a"] = float(np.max(np.abs(cfg.a - a_exact)) / np.max(np.abs(a_exact)))
        pair = np.zeros((2, N))
        pair[0, 0], pair[1, 0] = -d / 2, d / 2
        cfg = make_configuration(pair, np.ones(2), 1e-2, N, check=False)
        errs[f"pair N={N} R"] = float(np.max(np.abs(cfg.R - d)) / d)
        a1 = -(pair[0] - pair[1]) / d**2
        errs[f"pair N={N} a"] = float(np.max(np.abs(cfg.a[0] - a1)) / np.max(np.abs(a1)))
    resid = {name: make_configuration(*preset_points(name)[:2], PRESETS[name]["eps"], PRESETS[name]["dim"],
                                      check=False).residual() for name in PRESETS}
    elapsed = time.perf_counter() - t0
    worst = max(max(errs.values()), max(resid.values()))
    return CheckResult(5, "balancing closed forms", worst, 1e-12, worst <= 1e-12 and elapsed < 1.0,
                       {"closed_form_errors": errs, "preset_residuals": resid, "seconds": elapsed,
                        "runtime_limit": 1.0})


def _moment_slope(ctx: VerifyContext, perturb: bool) -> tuple[float, list]:
    eps_grid = (1e-2, 3e-3, 1e-3)
    moments = []
    for eps in eps_grid:
        cfg = ctx.config(eps)
        if perturb:
            R = cfg.R.copy()
            R[0] *= 1.1
            cfg = cfg.with_params(R=R)
        moments.append(abs(build_approx(cfg).matching_moments(0, 0)[0]))
    slope = float(np.polyfit(np.log(eps_grid), np.log(moments), 1)[0])
    return slope, moments


@_timed
def check_moments(ctx: VerifyContext) -> CheckResult:
    """log-log slope of the j = 0 Dirichlet matching moment: 1 + 8/(N^2 - 4) balanced, about 1 unbalanced."""
    N = PRESETS[ctx.preset]["dim"]
    expected = 1 + 8 / (N * N - 4)
    slope, moments = _moment_slope(ctx, False)
    slope_u, moments_u = _moment_slope(ctx, True)
    dev = max(abs(slope - expected), abs(slope_u - 1.0))
    return CheckResult(6, "matching moment slopes", dev, 0.3, dev <= 0.3,
                       {"balanced_slope": slope, "expected": expected, "balanced_moments": moments,
                        "unbalanced_slope": slope_u, "unbalanced_moments": moments_u})


@_timed
def check_interior_dtn(ctx: VerifyContext) -> CheckResult:
    """|T_eps - T_0| at eps = 1e-4, N = 3, R = 2 for degrees 0..3."""
    diffs = {}
    for l in range(4):
        val = interior_dtn(1e-4, 2.0, 3, l)
        diffs[f"l={l}"] = {"T_eps": val, "T_0": interior_dtn_limit(3, 2.0, l),
                           "diff": abs(val - interior_dtn_limit(3, 2.0, l))}
    worst = max(d["diff"] for d in diffs.values())
    return CheckResult(7, "interior DtN limits", worst, 1e-3, worst <= 1e-3, diffs)


@_timed
def check_kernel_dichotomy(ctx: VerifyContext) -> CheckResult:
    """sigma_min of the radial reduced system: singular for the pair, 0.5 (pinned +-10%) for the triangle."""
    def smin(name):
        pts, q, dim = preset_points(name)
        cfg = make_configuration(pts, q, PRESETS[name]["eps"], dim)
        return float(np.linalg.svd(kernel_system_matrix(cfg), compute_uv=False)[-1])

    pair, tri = smin("pair-N3"), smin("triangle-N3")
    ok = pair < 1e-10 and tri > 0.05 and abs(tri / TRIANGLE_KERNEL_SIGMA - 1) <= 0.1
    return CheckResult(8, "kernel dichotomy", tri, 0.05, ok,
                       {"pair_sigma_min": pair, "pair_tolerance": 1e-10, "triangle_sigma_min": tri,
                        "triangle_pinned": TRIANGLE_KERNEL_SIGMA, "pin_tolerance": 0.1})


def interior_manufactured_error(eps: float, R: float, dim: int, lmax: int, n_per_period: int = MODE_GRID) -> dict:
    """Per-degree relative error recovering g(t) = t^2 e^{-3t}(1 + sin t) from f = L_j g (exact derivatives).

    g vanishes at t = 0 and decays faster than e^{-2t}, so it lies in the weighted space for every degree
    at mu = 1.5 (degree one needs decay beyond e^{-((N-2)/2 + mu)t})."""
    out = {}
    for l in range(lmax + 1):
        pr = make_mode_problem(eps, R, dim, l, n_per_period)
        t = pr.t
        e = np.exp(-3 * t)
        p0, p1, p2 = t * t * e, (2 * t - 3 * t * t) * e, (2 - 12 * t + 9 * t * t) * e
        s, c = np.sin(t), np.cos(t)
        g = p0 * (1 + s)
        g2 = p2 * (1 + s) + 2 * p1 * c - p0 * s
        f = g2 - pr.q() * g
        w = solve_mode_low(pr, f)[0] if l <= 1 else solve_mode_high(pr, f)
        out[f"l={l}"] = float(np.max(np.abs(w - g)) / np.max(np.abs(g)))
    return out


@_timed
def check_manufactured(ctx: VerifyContext) -> CheckResult:
    """Interior per-mode recovery (<= 1e-6) and global glue_solve recovery (<= 1e-5) in under 2 minutes."""
    t0 = time.perf_counter()
    cfg = ctx.config()
    interior = interior_manufactured_error(cfg.eps, float(cfg.R[0]), cfg.dim, ctx.lmax)
    disc = ctx.disc(cfg)
    model = ModelSolver(disc)
    g, f = manufactured_field(disc, model, ctx.seed)
    sol = model.solve(f)
    glob = manufactured_error(disc, model, g, sol)
    elapsed = time.perf_counter() - t0
    worst_int = max(interior.values())
    ok = worst_int <= 1e-6 and glob <= 1e-5 and elapsed < 120.0
    return CheckResult(9, "manufactured linear solves", glob, 1e-5, ok,
                       {"interior_errors": interior, "interior_tolerance": 1e-6, "global_error": glob,
                        "global_tolerance": 1e-5, "jumps": sol.jumps, "seconds": elapsed, "runtime_limit": 120.0})


def sizing_ratio(ctx: VerifyContext, eps: float) -> float:
    """||L^{-1} zeta|| in the M~ norm over eps rho^2, deficiency part converted to parameters."""
    if eps not in ctx.sizing:
        cfg = ctx.config(eps)
        disc = ctx.disc(cfg)
        model = ModelSolver(disc)
        _, z = sample_approx(build_approx(cfg), disc, with_error=True, outer_only=True)
        sol = model.solve(z)
        S, alpha = deficiency_to_parameters(disc, sol.K)
        ctx.sizing[eps] = mtilde_norm(disc, sol.v, S, alpha) / (cfg.eps * cfg.rho**2)
    return ctx.sizing[eps]


@_timed
def check_sizing(ctx: VerifyContext) -> CheckResult:
    """Variation of ||L^{-1} zeta||/(eps rho^2) over eps in {3e-2, 1e-2, 3e-3}: max/min - 1 < 0.5."""
    vals = {eps: sizing_ratio(ctx, eps) for eps in (3e-2, 1e-2, 3e-3)}
    spread = max(vals.values()) / min(vals.values()) - 1
    return CheckResult(10, "linear sizing", spread, 0.5, spread < 0.5, {"ratios": vals})


@_timed
def check_nonlinear(ctx: VerifyContext) -> CheckResult:
    """Residual reduction >= 1e3 within max_iter steps, contraction < 1, u > 0, ||w|| <= C0 eps rho^2."""
    sol = ctx.solution()
    C0 = 2 * sizing_ratio(ctx, 3e-2)
    size = mtilde_norm(sol.disc, sol.v, sol.S, sol.alpha, sol.nu) / (sol.approx.config.eps * sol.approx.config.rho**2)
    factor = max(sol.contraction_factors) if sol.contraction_factors else float("nan")
    steps = len(sol.step_norms)
    ok = (sol.reduction >= 1e3 and steps <= 10 and factor < 1 and sol.min_u > 0 and size <= C0
          and ctx._solution_time < 600)
    return CheckResult(11, "nonlinear solve", sol.reduction, 1e3, ok,
                       {"picard_steps": steps, "residual_history": sol.residual_history,
                        "contraction_factors": sol.contraction_factors, "min_u": sol.min_u,
                        "w_over_eps_rho2": size, "C0": C0, "R_final": sol.R, "a_final": sol.a,
                        "seconds": ctx._solution_time, "runtime_limit": 600.0})


@_timed
def check_symmetry(ctx: VerifyContext) -> CheckResult:
    """Defect of the converged (v, S, alpha) under the rotation permuting the points, relative in M~."""
    sol = ctx.solution()
    d = symmetry_defect(sol)
    return CheckResult(12, "symmetry equivariance", d["w"], 1e-6, d["w"] <= 1e-6, d)


@_timed
def check_nondegeneracy(ctx: VerifyContext) -> CheckResult:
    """sigma_min at mu' = 1.5 positive and stable within 10% under one refinement of the radial grid."""
    sol = ctx.solution()
    base = nondegeneracy_spectrum(sol, 1.5)
    fine = nondegeneracy_spectrum(sol, 1.5, refine=2)
    change = abs(fine.sigma_min / base.sigma_min - 1)
    ok = base.sigma_min > 0 and fine.sigma_min > 0 and change <= 0.1
    return CheckResult(13, "nondegeneracy", base.sigma_min, 0.1, ok,
                       {"sigma_min": base.sigma_min, "sigma_min_refined": fine.sigma_min, "relative_change": change,
                        "admissible_columns": base.admissible_modes, "decay_rates": base.decay_rates[0]})


CHECKS = {
    1: check_energy,
    2: check_profile_bounds,
    3: check_period_asymptotics,
    4: check_profile_constant,
    5: check_balancing,
    6: check_moments,
    7: check_interior_dtn,
    8: check_kernel_dichotomy,
    9: check_manufactured,
    10: check_sizing,
    11: check_nonlinear,
    12: check_symmetry,
    13: check_nondegeneracy,
}


def run_checks(ctx: VerifyContext | None = None, which=None, echo=None) -> list[CheckResult]:
    ctx = ctx or VerifyContext()
    results = []
    for k in sorted(which or CHECKS):
        res = CHECKS[k](ctx)
        if echo is not None:
            echo(res.line())
        results.append(res)
    return results
