"""Radial Delaunay profiles for the conformally flat constant scalar curvature equation.

In cylindrical coordinates t = -log|x| a radial singular solution u = |x|^{(2-N)/2} v(t)
reduces to the autonomous ODE

    v'' - ((N-2)^2/4) v + (N(N-2)/4) v^{(N+2)/(N-2)} = 0,

whose bounded positive solutions are periodic.  The necksize eps is the minimum of v.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import integrate, optimize
from scipy.integrate._ivp import dop853_coefficients as _dop

__all__ = [
    "DelaunayParams",
    "DelaunayOrbit",
    "DelaunayFamilyParams",
    "IntegrationError",
    "QuadratureError",
    "SingularPointError",
    "cylinder_necksize",
    "hamiltonian",
    "v_max",
    "period",
    "integrate_orbit",
    "integrate_trajectory",
    "family_eval",
    "family_grad",
    "jacobi_fields",
    "write_orbit_csv",
]

STEPS_PER_PERIOD = 4096


class IntegrationError(RuntimeError):
    """Energy drift of a computed orbit exceeded the tolerance."""

    def __init__(self, message: str, drift: float):
        super().__init__(f"{message} (measured drift {drift:.3e})")
        self.drift = drift


class QuadratureError(RuntimeError):
    def __init__(self, message: str, values: tuple[float, float]):
        super().__init__(f"{message}: last refinements {values[0]!r}, {values[1]!r}")
        self.values = values


class SingularPointError(ValueError):
    pass


def cylinder_necksize(dim: int) -> float:
    """Necksize of the constant (cylindrical) solution, ((N-2)/N)^{(N-2)/4}."""
    return ((dim - 2) / dim) ** ((dim - 2) / 4)


@dataclass(frozen=True)
class DelaunayParams:
    dim: int
    eps: float

    def __post_init__(self):
        if self.dim < 3:
            raise ValueError("dimension must be at least 3")
        eps_cyl = cylinder_necksize(self.dim)
        if not (0.0 < self.eps <= eps_cyl * (1 + 1e-14)):
            raise ValueError(f"necksize must lie in (0, {eps_cyl}], got {self.eps}")

    @property
    def eps_cyl(self) -> float:
        return cylinder_necksize(self.dim)

    @property
    def degenerate(self) -> bool:
        return abs(self.eps - self.eps_cyl) <= 1e-14 * self.eps_cyl

    @property
    def a(self) -> float:
        """(N-2)/2, the decay rate of the Green function in the t variable."""
        return (self.dim - 2) / 2

    @property
    def power(self) -> float:
        return (self.dim + 2) / (self.dim - 2)

    @property
    def coupling(self) -> float:
        return self.dim * (self.dim - 2) / 4


def hamiltonian(v, vdot, dim: int):
    """Conserved energy vdot^2 - ((N-2)^2/4) v^2 + ((N-2)^2/4) v^{2N/(N-2)}."""
    a2 = (dim - 2) ** 2 / 4
    return vdot**2 - a2 * v**2 + a2 * np.power(v, 2 * dim / (dim - 2))


def _max_root(dim: int, eps: float) -> float:
    k = 2 * dim / (dim - 2)
    eps_cyl = cylinder_necksize(dim)
    level = eps**2 - eps**k

    def g(v):
        return v * v - v**k - level

    if g(eps_cyl) <= 0:
        return eps_cyl
    return optimize.brentq(g, eps_cyl, 1.0, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=500)


def v_max(params: DelaunayParams) -> float:
    """Maximum of the orbit: the larger root of v^2 - v^{2N/(N-2)} = eps^2 - eps^{2N/(N-2)}.

    For eps = eps_cyl this is the double root eps_cyl; check ``params.degenerate``.
    """
    if params.degenerate:
        return params.eps_cyl
    return _max_root(params.dim, params.eps)


def _period_integral(dim: int, eps: float, epsabs: float, epsrel: float, limit: int) -> float:
    k = 2 * dim / (dim - 2)
    c = eps ** (4 / (dim - 2))
    top = v_max(DelaunayParams(dim, eps)) / eps
    mid = 0.5 * (1.0 + top)

    # v = 1 + s^2 near the lower endpoint; F(v)/s^2 evaluated without cancellation
    def lower(s):
        s2 = s * s
        if s2 == 0.0:
            q = 2.0 - c * k
        else:
            q = (2.0 + s2) - c * math.expm1(k * math.log1p(s2)) / s2
        return 2.0 / math.sqrt(q)

    # v = top - s^2 near the upper endpoint, using F(top) = 0
    def upper(s):
        s2 = s * s
        if s2 == 0.0:
            q = c * k * top ** (k - 1) - 2.0 * top
        else:
            q = -(2.0 * top - s2) - c * top**k * math.expm1(k * math.log1p(-s2 / top)) / s2
        return 2.0 / math.sqrt(q)

    i1, _ = integrate.quad(lower, 0.0, math.sqrt(mid - 1.0), epsabs=epsabs, epsrel=epsrel, limit=limit)
    i2, _ = integrate.quad(upper, 0.0, math.sqrt(top - mid), epsabs=epsabs, epsrel=epsrel, limit=limit)
    return 4.0 / (dim - 2) * (i1 + i2)


def period(params: DelaunayParams, rtol: float = 1e-12) -> float:
    """Period T_eps from the endpoint-desingularized quadrature of the energy relation.

    At eps = eps_cyl the orbit is constant and the linearized period 2*pi/sqrt(N-2) is returned.
    """
    if params.degenerate:
        return 2 * math.pi / math.sqrt(params.dim - 2)
    coarse = _period_integral(params.dim, params.eps, 0.0, 1e-10, 200)
    fine = _period_integral(params.dim, params.eps, 0.0, 2e-13, 2000)
    if abs(fine - coarse) > max(rtol, 1e-9) * abs(fine):
        raise QuadratureError("period quadrature did not settle", (coarse, fine))
    return fine


_A = np.ascontiguousarray(_dop.A[: _dop.N_STAGES, : _dop.N_STAGES])
_B = np.ascontiguousarray(_dop.B)
_C = np.ascontiguousarray(_dop.C[: _dop.N_STAGES])


@numba.njit(cache=True)
def _rhs(y, a2, c, p, out):
    v = y[0]
    vp = v ** (p - 1.0)
    out[0] = y[1]
    out[1] = a2 * v - c * vp * v
    out[2] = y[3]
    out[3] = (a2 - c * p * vp) * y[2]


@numba.njit(cache=True)
def _rk8_fixed(y0, h, nsteps, a2, c, p, A, B):
    ns = B.shape[0]
    out = np.empty((nsteps + 1, 4))
    out[0] = y0
    K = np.empty((ns, 4))
    y = y0.copy()
    tmp = np.empty(4)
    for n in range(nsteps):
        _rhs(y, a2, c, p, K[0])
        for s in range(1, ns):
            for d in range(4):
                acc = 0.0
                for r in range(s):
                    acc += A[s, r] * K[r, d]
                tmp[d] = y[d] + h * acc
            _rhs(tmp, a2, c, p, K[s])
        for d in range(4):
            acc = 0.0
            for r in range(ns):
                acc += B[r] * K[r, d]
            y[d] = y[d] + h * acc
        out[n + 1] = y
    return out


def integrate_trajectory(dim: int, v0: float, vdot0: float, h: float, nsteps: int) -> np.ndarray:
    """Fixed-step 8th order Runge-Kutta (Dormand-Prince 8(5,3) tableau) for the profile ODE.

    Returns an array of shape (nsteps+1, 4) holding (v, vdot, phi, phidot) where phi is the
    variation with respect to v(0) started from (1, 0).  A negative step integrates backwards.
    """
    a2 = (dim - 2) ** 2 / 4
    c = dim * (dim - 2) / 4
    p = (dim + 2) / (dim - 2)
    y0 = np.array([v0, vdot0, 1.0, 0.0])
    return _rk8_fixed(y0, float(h), int(nsteps), a2, c, p, _A, _B)


def _hermite(tq, h, y, yd):
    """Cubic Hermite interpolation on the uniform grid k*h (tq already inside the grid)."""
    n = y.shape[0] - 1
    x = tq / h
    k = np.clip(np.floor(x).astype(np.int64), 0, n - 1)
    s = x - k
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    val = h00 * y[k] + h10 * h * yd[k] + h01 * y[k + 1] + h11 * h * yd[k + 1]
    dh00 = (6 * s2 - 6 * s) / h
    dh10 = 3 * s2 - 4 * s + 1
    dh01 = (-6 * s2 + 6 * s) / h
    dh11 = 3 * s2 - 2 * s
    der = dh00 * y[k] + dh10 * yd[k] + dh01 * y[k + 1] + dh11 * yd[k + 1]
    return val, der


@dataclass(frozen=True)
class DelaunayOrbit:
    """Sampled orbit on the uniform grid t_k = k*step, 0 <= t <= n_periods*T_eps."""

    params: DelaunayParams
    t_grid: np.ndarray
    v: np.ndarray
    vdot: np.ndarray
    period: float
    energy: float
    v_max: float
    variation: np.ndarray = field(repr=False)
    variation_dot: np.ndarray = field(repr=False)

    @property
    def step(self) -> float:
        return float(self.t_grid[1] - self.t_grid[0]) if self.t_grid.size > 1 else 0.0

    @property
    def steps_per_period(self) -> int:
        if self.params.degenerate:
            return 1
        return int(round(self.period / self.step))

    def energy_drift(self) -> float:
        return float(np.max(np.abs(hamiltonian(self.v, self.vdot, self.params.dim) - self.energy)))

    def evaluate(self, t):
        """(v, vdot) at arbitrary real t, using evenness and periodicity of the orbit."""
        t = np.asarray(t, dtype=float)
        if self.params.degenerate:
            return np.full(t.shape, self.params.eps), np.zeros(t.shape)
        m = self.steps_per_period
        tt = np.mod(t, self.period)
        val, der = _hermite(tt * (m * self.step / self.period), self.step, self.v[: m + 1], self.vdot[: m + 1])
        return val, der

    def accel(self, v):
        """Second derivative from the ODE, given v."""
        pr = self.params
        return pr.a**2 * v - pr.coupling * np.power(v, pr.power)

    def evaluate_variation(self, t):
        """d v_eps / d eps and its t-derivative; only on the stored range (it grows linearly)."""
        t = np.asarray(t, dtype=float)
        ta = np.abs(t)
        if np.any(ta > self.t_grid[-1] + 1e-12):
            raise ValueError("variation requested outside the integrated range")
        val, der = _hermite(ta, self.step, self.variation, self.variation_dot)
        return val, np.sign(t) * der + (t == 0) * der

    def event_period(self) -> float:
        """Period located as the second zero of vdot (sign change - to +) by Hermite root refinement."""
        if self.params.degenerate:
            return self.period
        acc = self.accel(self.v)
        vd = self.vdot
        idx = np.nonzero((vd[:-1] < 0) & (vd[1:] >= 0))[0]
        idx = idx[idx > 0]
        if idx.size == 0:
            raise ValueError("orbit shorter than one period")
        k = int(idx[0])
        h = self.step

        def g(tq):
            s = (tq - self.t_grid[k]) / h
            s2, s3 = s * s, s * s * s
            return (
                (2 * s3 - 3 * s2 + 1) * vd[k]
                + (s3 - 2 * s2 + s) * h * acc[k]
                + (-2 * s3 + 3 * s2) * vd[k + 1]
                + (s3 - s2) * h * acc[k + 1]
            )

        return optimize.brentq(g, self.t_grid[k], self.t_grid[k + 1], xtol=1e-15, rtol=1e-15)


def integrate_orbit(
    params: DelaunayParams,
    n_periods: int = 1,
    step: float | None = None,
    energy_tol: float = 1e-9,
) -> DelaunayOrbit:
    """Integrate v_eps from v(0)=eps, vdot(0)=0 over n_periods periods.

    The default step is T_eps/4096.  The variation d v/d eps is carried alongside.
    """
    pr = params
    if pr.degenerate:
        t = np.array([0.0, 1.0])
        e = pr.eps
        H = float(hamiltonian(e, 0.0, pr.dim))
        return DelaunayOrbit(pr, t, np.full(2, e), np.zeros(2), period(pr), H, e, np.ones(2), np.zeros(2))
    T = period(pr)
    if step is None:
        m = STEPS_PER_PERIOD
    else:
        m = max(1, int(round(T / step)))
    h = T / m
    nsteps = m * int(n_periods)
    sol = integrate_trajectory(pr.dim, pr.eps, 0.0, h, nsteps)
    t = h * np.arange(nsteps + 1)
    H0 = float(hamiltonian(pr.eps, 0.0, pr.dim))
    orbit = DelaunayOrbit(pr, t, sol[:, 0], sol[:, 1], T, H0, v_max(pr), sol[:, 2], sol[:, 3])
    drift = orbit.energy_drift()
    if not np.isfinite(drift) or drift > energy_tol:
        raise IntegrationError("energy not conserved along the orbit", drift)
    return orbit


@dataclass(frozen=True)
class DelaunayFamilyParams:
    """u_eps(R, a, x): axis translation R > 0 and translation a of the point at infinity."""

    base: DelaunayParams
    R: float = 1.0
    a: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("R must be positive")

    def a_vector(self) -> np.ndarray:
        if len(self.a) == 0:
            return np.zeros(self.base.dim)
        return np.asarray(self.a, dtype=float)


def _family_pieces(fam: DelaunayFamilyParams, x: np.ndarray):
    x = np.asarray(x, dtype=float)
    a = fam.a_vector()
    r2 = np.sum(x * x, axis=-1)
    y = x - a * r2[..., None]
    ry = np.sqrt(np.sum(y * y, axis=-1))
    if np.any(r2 == 0) or np.any(ry == 0):
        raise SingularPointError("evaluation at a singular point of the Delaunay family")
    s = -np.log(r2) + np.log(ry) + math.log(fam.R)
    return x, a, r2, y, ry, s


def family_eval(fam: DelaunayFamilyParams, orbit: DelaunayOrbit, x) -> np.ndarray:
    """|x - a|x|^2|^{(2-N)/2} v_eps(-2 log|x| + log|x - a|x|^2| + log R), vectorized over x[..., N]."""
    _, _, _, _, ry, s = _family_pieces(fam, x)
    v, _ = orbit.evaluate(s)
    return ry ** (-fam.base.a) * v


def family_grad(fam: DelaunayFamilyParams, orbit: DelaunayOrbit, x):
    """Value and Cartesian gradient of u_eps(R, a, x)."""
    x, a, r2, y, ry, s = _family_pieces(fam, x)
    v, vd = orbit.evaluate(s)
    ay = np.sum(a * y, axis=-1)
    glog_y = (y - 2 * x * ay[..., None]) / (ry**2)[..., None]
    grad_s = -2 * x / r2[..., None] + glog_y
    pref = ry ** (-fam.base.a)
    u = pref * v
    grad = pref[..., None] * (-fam.base.a * v[..., None] * glog_y + vd[..., None] * grad_s)
    return u, grad


def jacobi_fields(params: DelaunayParams, orbit: DelaunayOrbit, t):
    """Radial Jacobi factors (Phi0+, Phi0-, Phi1+, Phi1-) at t.

    Phi0+ = vdot, Phi0- = d v/d eps, Phi1+- = e^{-+t}(+-(N-2)/2 v - vdot).
    Phi1+ solves the mode equation with eigenvalue N-1 and decays like e^{-Nt/2}.
    """
    t = np.asarray(t, dtype=float)
    v, vd = orbit.evaluate(t)
    var, _ = orbit.evaluate_variation(t)
    a = params.a
    p1p = np.exp(-t) * (a * v - vd)
    p1m = np.exp(t) * (-a * v - vd)
    return vd, var, p1p, p1m


def write_orbit_csv(orbit: DelaunayOrbit, path) -> None:
    H = hamiltonian(orbit.v, orbit.vdot, orbit.params.dim)
    with open(path, "w") as fh:
        fh.write(f"# N={orbit.params.dim},eps={orbit.params.eps!r},T_eps={orbit.period!r}\n")
        fh.write("t,v,vdot,H_drift\n")
        for row in zip(orbit.t_grid, orbit.v, orbit.vdot, H - orbit.energy):
            fh.write(",".join(repr(float(c)) for c in row) + "\n")
