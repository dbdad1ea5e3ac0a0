"""Approximate solution: Delaunay pieces near each singular point glued to a sum of Green functions.

ubar = sum_i chi_i u_i + (1 - sum_i chi_i) wbar, where u_i = u_{eps_i}(R_i, a_i, x - x_i),
wbar = sum_i (eps_i/2) R_i^{(N-2)/2} |x - x_i|^{2-N} and chi_i is a radial cutoff equal to one on
|x - x_i| <= rho_i and zero beyond 2 rho_i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .balance import Configuration
from .delaunay import DelaunayFamilyParams, DelaunayOrbit, DelaunayParams, SingularPointError, family_grad, integrate_orbit
from .harmonics import COORDINATE_NORMALIZATION, AngularQuadrature, SphereBasis

__all__ = [
    "smoothstep7",
    "CutoffFamily",
    "ApproxSolution",
    "build_approx",
    "eval_approx",
    "eval_wbar",
    "orbit_cache",
]

_ORBITS: dict[tuple[int, float], DelaunayOrbit] = {}


def orbit_cache(dim: int, eps: float) -> DelaunayOrbit:
    """One-period orbits are shared between all users of the same (N, eps)."""
    key = (dim, float(eps))
    if key not in _ORBITS:
        _ORBITS[key] = integrate_orbit(DelaunayParams(dim, float(eps)), n_periods=1)
    return _ORBITS[key]


def smoothstep7(x):
    """Degree-7 smoothstep 0 -> 1 on [0, 1] with three vanishing derivatives at both ends; returns S, S', S''."""
    x = np.clip(x, 0.0, 1.0)
    S = x**4 * (35 - 84 * x + 70 * x**2 - 20 * x**3)
    dS = 140 * x**3 * (1 - x) ** 3
    d2S = 420 * x**2 * (1 - x) ** 2 * (1 - 2 * x)
    return S, dS, d2S


@dataclass(frozen=True)
class CutoffFamily:
    """chi(r) = 1 - S((r - rho)/rho): one on r <= rho, zero on r >= 2 rho."""

    rho: np.ndarray

    def profile(self, i: int, r):
        rho = self.rho[i]
        S, dS, d2S = smoothstep7((np.asarray(r) - rho) / rho)
        return 1.0 - S, -dS / rho, -d2S / rho**2

    @staticmethod
    def derivative_constants() -> tuple[float, float]:
        """Sharp c1, c2 with |chi'| <= c1/rho and |chi''| <= c2/rho^2."""
        x = np.linspace(0, 1, 20001)
        _, d1, d2 = smoothstep7(x)
        return float(np.max(np.abs(d1))), float(np.max(np.abs(d2)))


def eval_wbar(config: Configuration, x, R=None) -> np.ndarray:
    """wbar(x) = sum_i (eps_i/2) R_i^{(N-2)/2} |x - x_i|^{2-N}."""
    x = np.asarray(x, dtype=float)
    R = config.R if R is None else np.asarray(R)
    N = config.dim
    out = np.zeros(x.shape[:-1])
    for i in range(config.n):
        r = np.sqrt(np.sum((x - config.points[i]) ** 2, axis=-1))
        if np.any(r == 0):
            raise SingularPointError("wbar evaluated at a singular point")
        out += 0.5 * config.eps_i[i] * R[i] ** ((N - 2) / 2) * r ** (2 - N)
    return out


class ApproxSolution:
    """Evaluation of ubar, its error term zeta and related quantities.

    Points are passed either in absolute coordinates (anchor=None) or as offsets y = x - x_anchor
    from one singular point; the latter keeps full relative precision very close to that point.
    """

    def __init__(self, config: Configuration, orbits: list[DelaunayOrbit] | None = None):
        self.config = config
        N = config.dim
        if orbits is None:
            orbits = [orbit_cache(N, e) for e in config.eps_i]
        self.orbits = orbits
        self.cutoffs = CutoffFamily(config.rho_i)
        self.coupling = N * (N - 2) / 4
        self.power = (N + 2) / (N - 2)
        self.wbar_coeff = 0.5 * config.eps_i * config.R ** ((N - 2) / 2)

    def with_params(self, R=None, a=None) -> "ApproxSolution":
        return ApproxSolution(self.config.with_params(R, a), self.orbits)

    def family(self, i: int) -> DelaunayFamilyParams:
        c = self.config
        return DelaunayFamilyParams(DelaunayParams(c.dim, float(c.eps_i[i])), float(c.R[i]), tuple(c.a[i]))

    # -- building blocks -------------------------------------------------------------------
    def _wbar_and_grad(self, x_abs, y_local=None, anchor=None):
        c = self.config
        N = c.dim
        w = np.zeros(x_abs.shape[:-1])
        g = np.zeros(x_abs.shape)
        for k in range(c.n):
            d = y_local if (anchor is not None and k == anchor) else x_abs - c.points[k]
            r = np.sqrt(np.sum(d * d, axis=-1))
            if np.any(r == 0):
                raise SingularPointError("evaluation at a singular point")
            w += self.wbar_coeff[k] * r ** (2 - N)
            g += (self.wbar_coeff[k] * (2 - N) * r ** (-N))[..., None] * d
        return w, g

    def _locate(self, x, anchor):
        c = self.config
        x = np.asarray(x, dtype=float)
        if anchor is None:
            x_abs = x
            offsets = [x_abs - c.points[k] for k in range(c.n)]
        else:
            x_abs = c.points[anchor] + x
            offsets = [x if k == anchor else x_abs - c.points[k] for k in range(c.n)]
        return x_abs, offsets

    def evaluate(self, x, anchor: int | None = None, with_error: bool = False):
        """ubar at points; with_error also returns zeta = Laplacian(ubar) + N(N-2)/4 ubar^{(N+2)/(N-2)}."""
        c = self.config
        x_abs, offsets = self._locate(x, anchor)
        y_anchor = offsets[anchor] if anchor is not None else None
        wbar, gw = self._wbar_and_grad(x_abs, y_anchor, anchor)
        u = wbar.copy()
        zeta = self.coupling * wbar**self.power if with_error else None
        for i in range(c.n):
            y = offsets[i]
            r = np.sqrt(np.sum(y * y, axis=-1))
            near = r < 2 * c.rho_i[i]
            if not np.any(near):
                continue
            yn = y[near]
            rn = r[near]
            ui, gi = family_grad(self.family(i), self.orbits[i], yn)
            chi, dchi, d2chi = self.cutoffs.profile(i, rn)
            ub = chi * ui + (1 - chi) * wbar[near]
            u[near] = ub
            if with_error:
                inner = rn <= c.rho_i[i]
                theta = yn / rn[..., None]
                dr_diff = np.sum((gi - gw[near]) * theta, axis=-1)
                lap_chi = d2chi + (c.dim - 1) / rn * dchi
                z = (
                    2 * dchi * dr_diff
                    + lap_chi * (ui - wbar[near])
                    - self.coupling * (chi * ui**self.power - ub**self.power)
                )
                z[inner] = 0.0
                zeta[near] = z
        if with_error:
            return u, zeta
        return u

    def error_term(self, x, anchor: int | None = None) -> np.ndarray:
        return self.evaluate(x, anchor, with_error=True)[1]

    def delaunay_piece(self, i: int, y) -> np.ndarray:
        """u_i at offsets y from x_i (no cutoff)."""
        return family_grad(self.family(i), self.orbits[i], np.asarray(y, dtype=float))[0]

    # -- diagnostics -----------------------------------------------------------------------
    def matching_moments(self, i: int, j: int, quad: AngularQuadrature | None = None):
        """Projections of u_i - wbar and of its radial derivative on the sphere |x - x_i| = rho_i
        against phi_0 = 1 (j = 0) or the coordinate function theta_j (j = 1..N)."""
        c = self.config
        quad = quad or AngularQuadrature.for_degree(8)
        theta = quad.points
        rho = c.rho_i[i]
        y = rho * theta
        x_abs = c.points[i] + y
        ui, gi = family_grad(self.family(i), self.orbits[i], y)
        w, gw = self._wbar_and_grad(x_abs, y, i)
        phi = np.ones(quad.size) if j == 0 else theta[:, j - 1]
        diff = ui - w
        ddiff = np.sum((gi - gw) * theta, axis=-1)
        return float(np.sum(quad.weights * diff * phi)), float(np.sum(quad.weights * ddiff * phi))

    def error_modes(self, i: int, radii, basis: SphereBasis | None = None) -> np.ndarray:
        """Mode coefficients of zeta on the spheres |x - x_i| = r (in the orthonormal basis), shape (len(radii), modes)."""
        basis = basis or SphereBasis(8)
        radii = np.asarray(radii, dtype=float)
        y = radii[:, None, None] * basis.quad.points[None, :, :]
        z = self.error_term(y, anchor=i)
        return basis.decompose(z)

    def potential_difference(self, i: int, y) -> np.ndarray:
        """ubar^{4/(N-2)} - u_i^{4/(N-2)} at offsets y from x_i (u_i with a_i = 0 as in the model operator)."""
        c = self.config
        e = 4 / (c.dim - 2)
        ub = self.evaluate(y, anchor=i)
        fam0 = DelaunayFamilyParams(DelaunayParams(c.dim, float(c.eps_i[i])), float(c.R[i]))
        u0 = family_grad(fam0, self.orbits[i], np.asarray(y, dtype=float))[0]
        return ub**e - u0**e


def build_approx(config: Configuration) -> ApproxSolution:
    return ApproxSolution(config)


def eval_approx(approx: ApproxSolution, x, with_error: bool = False):
    """ubar (and zeta when requested) at absolute points x[..., N]."""
    return approx.evaluate(x, None, with_error)


def phi_normalization(j: int) -> float:
    """phi_j (the constant 1 or the coordinate theta_j) in units of the orthonormal mode j."""
    return COORDINATE_NORMALIZATION[0 if j == 0 else 1]
