"""Command line driver: configuration ingestion, pipeline stages and reports.

Every subcommand writes <out>/<subcommand>.json holding the resolved run settings, the results and a
list of named checks (value, tolerance, pass flag).  The exit code is 0 iff every check passed.
"""

from __future__ import annotations

import json
import math
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import click
import numpy as np

from . import __version__
from .approx import build_approx
from .balance import PRESETS, BalancingError, ConfigurationError, make_configuration, preset_points
from .delaunay import DelaunayParams, integrate_orbit, period, write_orbit_csv
from .gluing import (
    GluingError,
    ModelSolver,
    kernel_system_matrix,
    manufactured_error,
    manufactured_field,
)
from .harmonics import mode_list
from .nonlinear import ConvergenceError, PositivityError, nondegeneracy_spectrum, solve_nonlinear, symmetry_defect
from .spaces import Discretization
from .verify import CHECKS, VerifyContext, interior_manufactured_error, run_checks

__all__ = ["RunSpec", "load_config", "run", "main"]

CONFIG_KEYS = {"dim", "eps", "lmax", "tgrid_per_period", "tol_energy", "tol_linear", "max_iter", "out", "preset",
               "seed", "points", "q"}


@dataclass
class RunSpec:
    """Resolved settings: command-line flags override the config document, which overrides the preset."""

    command: str
    config_path: str | None = None
    preset: str | None = None
    dim: int | None = None
    eps: float | None = None
    lmax: int = 8
    tgrid_per_period: int = 2048
    tol_energy: float = 1e-9
    tol_linear: float = 1e-10
    max_iter: int = 10
    out: str = "out"
    seed: int = 0
    points: list | None = None
    q: list | None = None

    def validate(self) -> None:
        for name in ("tol_energy", "tol_linear"):
            if not getattr(self, name) > 0:
                raise click.UsageError(f"{name} must be positive")
        if self.eps is not None and not self.eps > 0:
            raise click.UsageError("eps must be positive")
        if self.lmax < 1 or self.tgrid_per_period < 512 or self.max_iter < 1:
            raise click.UsageError("need lmax >= 1, tgrid-per-period >= 512 and max-iter >= 1")
        if self.preset is not None and self.preset not in PRESETS:
            raise click.UsageError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")

    def configuration(self, check: bool = True):
        if self.points is not None:
            if self.q is None:
                self.q = [1.0] * len(self.points)
            dim = self.dim or len(self.points[0])
            pts, q = np.asarray(self.points, dtype=float), np.asarray(self.q, dtype=float)
        else:
            name = self.preset or "triangle-N3"
            pts, q, dim = preset_points(name)
        eps = self.eps if self.eps is not None else PRESETS.get(self.preset or "triangle-N3", {}).get("eps", 1e-2)
        return make_configuration(pts, q, eps, dim, check=check)

    def context(self) -> VerifyContext:
        return VerifyContext(preset=self.preset or "triangle-N3", eps=self.eps, lmax=self.lmax,
                             tgrid_per_period=self.tgrid_per_period, tol_energy=self.tol_energy,
                             tol_linear=self.tol_linear, max_iter=self.max_iter, seed=self.seed)


def load_config(path: str) -> dict:
    """Read a JSON config; keys may use '-' or '_'.  Errors name the offending line or key."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise click.UsageError(f"{path}: malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")
    if not isinstance(raw, dict):
        raise click.UsageError(f"{path}: top level must be an object")
    out = {}
    for key, val in raw.items():
        k = key.replace("-", "_")
        if k not in CONFIG_KEYS:
            raise click.UsageError(f"{path}: unknown key {key!r} (allowed: {sorted(CONFIG_KEYS)})")
        out[k] = val
    if "points" in out:
        pts = out["points"]
        if not (isinstance(pts, list) and pts and all(isinstance(p, list) for p in pts)):
            raise click.UsageError(f"{path}: key 'points' must be a list of coordinate lists")
        if len({len(p) for p in pts}) != 1:
            raise click.UsageError(f"{path}: key 'points' has rows of different lengths")
        if "q" in out and len(out["q"]) != len(pts):
            raise click.UsageError(f"{path}: key 'q' must have one entry per point")
    return out


def _spec(command: str, opts: dict) -> RunSpec:
    values = {}
    if opts.get("config"):
        values.update(load_config(opts["config"]))
        values["config_path"] = opts["config"]
    for f in fields(RunSpec):
        if f.name in opts and opts[f.name] is not None:
            values[f.name] = opts[f.name]
    spec = RunSpec(command, **values)
    spec.validate()
    Path(spec.out).mkdir(parents=True, exist_ok=True)
    return spec


def _check(name: str, value, tolerance, passed: bool) -> dict:
    return {"name": name, "value": value, "tolerance": tolerance, "passed": bool(passed)}


def _to_json(x):
    if isinstance(x, dict):
        return {str(k): _to_json(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_json(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def _finish(spec: RunSpec, results: dict, checks: list) -> None:
    doc = {"command": spec.command, "version": __version__, "settings": asdict(spec), "results": results,
           "checks": checks, "passed": all(c["passed"] for c in checks)}
    path = Path(spec.out) / f"{spec.command}.json"
    path.write_text(json.dumps(_to_json(doc), indent=2))
    for c in checks:
        click.echo(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: value={c['value']} tol={c['tolerance']}")
    click.echo(f"wrote {path}")
    if not doc["passed"]:
        raise SystemExit(1)


def common_options(fn):
    opts = [
        click.option("--config", type=click.Path(exists=True, dir_okay=False), help="JSON config document."),
        click.option("--preset", type=str, help=f"One of {', '.join(sorted(PRESETS))}."),
        click.option("--dim", type=int, help="Dimension N."),
        click.option("--eps", type=float, help="Necksize scale."),
        click.option("--lmax", type=int, help="Spherical harmonic degree at the interfaces."),
        click.option("--tgrid-per-period", "tgrid_per_period", type=int, help="Radial nodes per Delaunay period."),
        click.option("--tol-energy", "tol_energy", type=float, help="Energy drift tolerance."),
        click.option("--tol-linear", "tol_linear", type=float, help="Linear solve tolerance."),
        click.option("--max-iter", "max_iter", type=int, help="Maximum Picard steps."),
        click.option("--out", type=click.Path(file_okay=False), help="Output directory."),
        click.option("--seed", type=int, help="Seed for manufactured-solution draws."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


@click.group()
@click.version_option(__version__)
def main():
    """Numerical gluing construction of singular solutions of the constant scalar curvature equation."""


@main.command()
@common_options
@click.option("--periods", type=int, default=5, show_default=True, help="Periods to integrate.")
@click.option("--emit", type=click.Path(dir_okay=False), help="CSV file for the sampled orbit.")
def delaunay(periods, emit, **opts):
    """Orbit, period and energy drift of one Delaunay profile."""
    spec = _spec("delaunay", opts)
    dim = spec.dim or 3
    eps = spec.eps if spec.eps is not None else 1e-2
    params = DelaunayParams(dim, eps)
    orb = integrate_orbit(params, n_periods=periods, energy_tol=math.inf)
    T = period(params)
    drift = orb.energy_drift()
    results = {"dim": dim, "eps": eps, "period": T, "v_max": orb.v_max, "energy": orb.energy,
               "energy_drift": drift, "periods": periods}
    if not params.degenerate:
        results["event_period"] = orb.event_period()
    if emit:
        write_orbit_csv(orb, emit)
        results["orbit_csv"] = emit
    checks = [_check("energy drift", drift, spec.tol_energy, drift <= spec.tol_energy)]
    dev = abs(float(np.min(orb.v)) / eps - 1)
    checks.append(_check("orbit minimum equals necksize (relative)", dev, 1e-8, dev <= 1e-8))
    _finish(spec, results, checks)


@main.command()
@common_options
def balance(**opts):
    """Balanced Delaunay parameters R and displacements a."""
    spec = _spec("balance", opts)
    cfg = spec.configuration(check=False)
    res = cfg.residual()
    results = cfg.to_dict()
    checks = [_check("balancing residual", res, 1e-12, res <= 1e-12)]
    N = cfg.dim
    d = np.linalg.norm(cfg.points[:, None] - cfg.points[None], axis=-1)[~np.eye(cfg.n, dtype=bool)]
    equal = np.allclose(cfg.q, cfg.q[0]) and np.allclose(d, d[0])
    if equal and cfg.n in (2, 3):
        R_exact = d[0] if cfg.n == 2 else (d[0] ** (N - 2) / 2) ** (1 / (N - 2))
        err = float(np.max(np.abs(cfg.R - R_exact)) / R_exact)
        results["R_closed_form"] = R_exact
        checks.append(_check("closed-form R", err, 1e-12, err <= 1e-12))
    for i in range(cfg.n):
        click.echo(f"point {i}: R = {float(cfg.R[i])!r}, a = {cfg.a[i].tolist()}")
    _finish(spec, results, checks)


@main.command()
@common_options
def approx(**opts):
    """Matching moments and the error term of the approximate solution."""
    spec = _spec("approx", opts)
    cfg = spec.configuration()
    ap = build_approx(cfg)
    moments = []
    for i in range(cfg.n):
        for j in range(cfg.dim + 1):
            dm, nm = ap.matching_moments(i, j)
            moments.append({"point": i, "mode": j, "eps": cfg.eps, "dirichlet": dm, "neumann": nm})
    radii = np.geomspace(0.5 * cfg.rho, 2.0, 48)
    path = Path(spec.out) / "zeta_modes.csv"
    inner_max = 0.0
    ubar_min = math.inf
    with open(path, "w") as fh:
        fh.write("point,mode,r,value\n")
        for i in range(cfg.n):
            modes = ap.error_modes(i, radii)
            for k, r in enumerate(radii):
                for j, val in enumerate(modes[k]):
                    fh.write(f"{i},{j},{r!r},{val!r}\n")
            inner = radii[radii < cfg.rho_i[i]]
            if inner.size:
                inner_max = max(inner_max, float(np.max(np.abs(ap.error_modes(i, inner)))))
            y = radii[:, None, None] * np.array([[[1.0, 0, 0], [-1.0, 0, 0], [0, 0, 1.0]]])
            ubar_min = min(ubar_min, float(np.min(ap.evaluate(y, anchor=i))))
    scale = cfg.eps * cfg.rho**2
    worst0 = max(abs(m["dirichlet"]) for m in moments if m["mode"] == 0) / scale
    results = {"moments": moments, "zeta_csv": str(path), "max_dirichlet_moment_over_eps_rho2": worst0}
    checks = [_check("error term vanishes inside the inner balls", inner_max, 0.0, inner_max == 0.0),
              _check("approximate solution positive", ubar_min, 0.0, ubar_min > 0)]
    _finish(spec, results, checks)


@main.command()
@common_options
def linear(**opts):
    """Dirichlet-to-Neumann diagnostics and manufactured-solution checks."""
    spec = _spec("linear", opts)
    cfg = spec.configuration()
    K = kernel_system_matrix(cfg)
    results = {"kernel_system_sigma_min": float(np.linalg.svd(K, compute_uv=False)[-1])}
    if cfg.n < 3:
        raise click.ClickException(
            f"{cfg.n} points: the radial reduced system is singular (sigma_min "
            f"{results['kernel_system_sigma_min']:.2e}); gluing needs at least three balanced points")
    disc = Discretization(cfg, lmax=spec.lmax, tgrid_per_period=spec.tgrid_per_period)
    t0 = time.perf_counter()
    model = ModelSolver(disc)
    S0 = ModelSolver(disc, with_potential=False).S
    sym = float(np.max(np.abs(S0 - S0.T)) / np.max(np.abs(S0)))
    g, f = manufactured_field(disc, model, spec.seed)
    sol = model.solve(f)
    glob = manufactured_error(disc, model, g, sol)
    interior = interior_manufactured_error(cfg.eps, float(cfg.R[0]), cfg.dim, spec.lmax)
    results.update({"sigma_min_S_minus_T": model.sigma_min, "S0_symmetry_defect": sym,
                    "S_minus_S0": float(np.max(np.abs(model.S - S0))), "manufactured_global_error": glob,
                    "manufactured_interior_errors": interior, "jumps": sol.jumps,
                    "seconds": time.perf_counter() - t0})
    path = Path(spec.out) / "s_minus_t.csv"
    labels = [f"p{i}_l{l}_m{m}" for i in range(cfg.n) for (l, m) in mode_list(spec.lmax)]
    A = model.S - np.diag(model.T)
    with open(path, "w") as fh:
        fh.write("row," + ",".join(labels) + "\n")
        for lab, row in zip(labels, A):
            fh.write(lab + "," + ",".join(repr(float(x)) for x in row) + "\n")
    results["matrix_csv"] = str(path)
    checks = [_check("sigma_min(S - T)", model.sigma_min, 1e-10, model.sigma_min > 1e-10),
              _check("S0 symmetry defect", sym, 1e-6, sym < 1e-6),
              _check("manufactured glue recovery", glob, 1e-5, glob <= 1e-5),
              _check("manufactured interior recovery", max(interior.values()), 1e-6,
                     max(interior.values()) <= 1e-6)]
    _finish(spec, results, checks)


@main.command()
@common_options
def solve(**opts):
    """Full pipeline: balanced parameters, approximate solution, Picard iteration and diagnostics."""
    spec = _spec("solve", opts)
    cfg = spec.configuration()
    if cfg.n < 3:
        raise click.ClickException("gluing needs at least three balanced points")
    disc = Discretization(cfg, lmax=spec.lmax, tgrid_per_period=spec.tgrid_per_period)
    t0 = time.perf_counter()
    sol = solve_nonlinear(disc, build_approx(cfg), max_iter=spec.max_iter, tol_linear=spec.tol_linear)
    results = sol.summary()
    results["seconds"] = time.perf_counter() - t0
    nd = nondegeneracy_spectrum(sol, 1.5)
    results["nondegeneracy"] = {"mu": 1.5, "sigma_min": nd.sigma_min, "columns": nd.admissible_modes}
    pts = cfg.points
    if cfg.n >= 3 and np.allclose(pts[:, 2], 0) and np.allclose(np.linalg.norm(pts, axis=1), np.linalg.norm(pts[0])):
        try:
            results["symmetry_defect"] = symmetry_defect(sol)
        except ValueError:
            pass
    path = Path(spec.out) / "solution_modes.csv"
    basis = disc.ball_basis
    with open(path, "w") as fh:
        fh.write("point,mode,r,v,u\n")
        for i in range(disc.n):
            rows = np.arange(0, len(disc.t(i)), 16)
            r = np.exp(-disc.t(i)[rows])
            cv = basis.decompose(sol.v.balls[i][rows], disc.lmax)
            cu = basis.decompose(sol.u.balls[i][rows], disc.lmax)
            for k in range(len(rows)):
                for j in range(cv.shape[1]):
                    fh.write(f"{i},{j},{r[k]!r},{cv[k, j]!r},{cu[k, j]!r}\n")
    results["modes_csv"] = str(path)
    checks = [_check("residual reduction", sol.reduction, 1e3, sol.reduction >= 1e3),
              _check("positivity of u", sol.min_u, 0.0, sol.min_u > 0),
              _check("nondegeneracy sigma_min", nd.sigma_min, 0.0, nd.sigma_min > 0)]
    _finish(spec, results, checks)


@main.command()
@common_options
@click.option("--only", type=int, multiple=True, help="Run only these criteria (repeatable).")
def verify(only, **opts):
    """Acceptance suite."""
    spec = _spec("verify", opts)
    which = list(only) or sorted(CHECKS)
    bad = [k for k in which if k not in CHECKS]
    if bad:
        raise click.UsageError(f"unknown criteria {bad}; choose from 1..{len(CHECKS)}")
    results = run_checks(spec.context(), which, click.echo)
    checks = [_check(f"criterion {r.criterion}: {r.name}", r.value, r.tolerance, r.passed) for r in results]
    _finish(spec, {"criteria": [r.to_dict() for r in results]}, checks)


@main.command()
@common_options
def report(**opts):
    """Aggregate the JSON outputs in the output directory into report.json and report.md."""
    spec = _spec("report", opts)
    out = Path(spec.out)
    docs = {}
    for stage in STAGES:
        path = out / f"{stage}.json"
        if not path.exists():
            continue
        try:
            docs[path.stem] = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise click.ClickException(f"{path}: unreadable ({exc.msg} at line {exc.lineno})")
    if not docs:
        raise click.ClickException(f"no JSON outputs found in {out}")
    lines = ["# Run report", "", "| stage | check | value | tolerance | result |", "|---|---|---|---|---|"]
    all_checks = []
    for stage, doc in docs.items():
        for c in doc.get("checks", []):
            all_checks.append(dict(c, stage=stage))
            lines.append(f"| {stage} | {c['name']} | {c['value']} | {c['tolerance']} | "
                         f"{'pass' if c['passed'] else 'FAIL'} |")
    (out / "report.md").write_text("\n".join(lines) + "\n")
    (out / "report.json").write_text(json.dumps({"stages": docs, "checks": all_checks}, indent=2))
    click.echo(f"wrote {out / 'report.md'}")
    n_fail = sum(not c["passed"] for c in all_checks)
    if n_fail:
        click.echo(f"{n_fail} failed checks")
        raise SystemExit(1)


STAGES = ("delaunay", "balance", "approx", "linear", "solve", "verify")

_ERRORS = (BalancingError, ConfigurationError, GluingError, ConvergenceError, PositivityError, KeyError,
           ValueError, RuntimeError)


def run(argv=None) -> int:
    """Run the driver on argv and return its exit code."""
    try:
        main.main(args=list(argv) if argv is not None else None, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    except _ERRORS as exc:
        click.echo(f"Error: {type(exc).__name__}: {exc}", err=True)
        return 1
    return 0


def entry() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    entry()
