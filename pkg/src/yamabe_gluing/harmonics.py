"""Real spherical harmonics on S^2 and Gauss-Legendre x uniform-longitude product quadrature.

Mode ordering: j = 0 is the constant; j = 1, 2, 3 are the degree-one harmonics proportional to the
coordinate functions x, y, z; higher degrees follow in (l, m) order with m = -l..l.  The basis is
orthonormal, so the coordinate function theta_j equals sqrt(4 pi / 3) times mode j and the constant 1
equals sqrt(4 pi) times mode 0 (see ``COORDINATE_NORMALIZATION``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special

__all__ = [
    "QuadratureExactnessError",
    "mode_list",
    "mode_index",
    "n_modes",
    "mode_degrees",
    "COORDINATE_NORMALIZATION",
    "to_spherical",
    "real_sph_harm",
    "eval_mode",
    "AngularQuadrature",
    "SphereBasis",
    "solid_harmonics",
    "real_harmonics_all",
]


class QuadratureExactnessError(ValueError):
    pass


def mode_list(lmax: int) -> list[tuple[int, int]]:
    modes = [(0, 0)]
    if lmax >= 1:
        modes += [(1, 1), (1, -1), (1, 0)]
    for l in range(2, lmax + 1):
        modes += [(l, m) for m in range(-l, l + 1)]
    return modes


def n_modes(lmax: int) -> int:
    return (lmax + 1) ** 2


def mode_index(l: int, m: int) -> int:
    return mode_list(max(l, 1)).index((l, m))


def mode_degrees(lmax: int) -> np.ndarray:
    return np.array([l for l, _ in mode_list(lmax)])


# value of phi_0 = 1 and of phi_j = theta_j in units of the orthonormal modes
COORDINATE_NORMALIZATION = {0: math.sqrt(4 * math.pi), 1: math.sqrt(4 * math.pi / 3)}


def to_spherical(x: np.ndarray):
    """Radius, polar angle and azimuth of points x[..., 3]."""
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(r > 0, x[..., 2] / np.where(r > 0, r, 1.0), 1.0)
    theta = np.arccos(np.clip(z, -1.0, 1.0))
    phi = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2 * math.pi)
    return r, theta, phi


def real_sph_harm(l: int, m: int, theta, phi, derivatives: bool = False):
    """Orthonormal real harmonic Y_lm; with derivatives also returns (d/dtheta, d/dphi)."""
    am = abs(m)
    if derivatives:
        y, dy = special.sph_harm_y(l, am, theta, phi, diff_n=1)
        dth, dph = dy[..., 0], dy[..., 1]
    else:
        y = special.sph_harm_y(l, am, theta, phi)
    sign = (-1) ** am
    if m > 0:
        f = lambda z: math.sqrt(2) * sign * z.real
    elif m < 0:
        f = lambda z: math.sqrt(2) * sign * z.imag
    else:
        f = lambda z: z.real
    if derivatives:
        return f(y), f(dth), f(dph)
    return f(y)


def eval_mode(j: int, x) -> np.ndarray:
    """Mode j at unit vectors x[..., 3]."""
    _, th, ph = to_spherical(x)
    deg = int(math.isqrt(j))
    l, m = mode_list(deg)[j]
    return real_sph_harm(l, m, th, ph)


def real_harmonics_all(lmax: int, theta, phi) -> np.ndarray:
    """All orthonormal real harmonics up to lmax at (theta, phi); shape (..., modes) in mode order."""
    theta = np.asarray(theta, dtype=float)
    A = special.sph_harm_y_all(lmax, lmax, theta, phi)
    out = np.empty(theta.shape + (n_modes(lmax),))
    for j, (l, m) in enumerate(mode_list(lmax)):
        am = abs(m)
        z = A[l, am]
        if m > 0:
            out[..., j] = math.sqrt(2) * (-1) ** am * z.real
        elif m < 0:
            out[..., j] = math.sqrt(2) * (-1) ** am * z.imag
        else:
            out[..., j] = z.real
    return out


def solid_harmonics(lmax: int, x: np.ndarray, exterior: bool):
    """Values of r^l Y_lm (interior) or r^{-l-1} Y_lm (exterior) at points x[..., 3]; shape (..., modes)."""
    r, th, ph = to_spherical(x)
    out = real_harmonics_all(lmax, th, ph)
    deg = mode_degrees(lmax)
    pw = -deg - 1 if exterior else deg
    out *= r[..., None] ** pw
    return out


@dataclass(frozen=True)
class AngularQuadrature:
    """Product rule: n_theta Gauss-Legendre nodes in cos(theta) times n_phi equispaced azimuths."""

    n_theta: int
    n_phi: int

    @property
    def exactness(self) -> int:
        return min(2 * self.n_theta - 1, self.n_phi - 1)

    @cached_property
    def _nodes(self):
        z, wz = np.polynomial.legendre.leggauss(self.n_theta)
        phi = 2 * math.pi * np.arange(self.n_phi) / self.n_phi
        th = np.arccos(z)
        TH, PH = np.meshgrid(th, phi, indexing="ij")
        W = np.outer(wz, np.full(self.n_phi, 2 * math.pi / self.n_phi))
        return TH.ravel(), PH.ravel(), W.ravel()

    @property
    def theta(self) -> np.ndarray:
        return self._nodes[0]

    @property
    def phi(self) -> np.ndarray:
        return self._nodes[1]

    @property
    def weights(self) -> np.ndarray:
        return self._nodes[2]

    @property
    def size(self) -> int:
        return self.n_theta * self.n_phi

    @cached_property
    def points(self) -> np.ndarray:
        th, ph = self.theta, self.phi
        return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)

    @classmethod
    def for_degree(cls, lmax: int, extra: int = 0) -> "AngularQuadrature":
        """Smallest product rule integrating products of degree-lmax harmonics exactly."""
        L = lmax + extra
        return cls(L + 1, 2 * L + 2)


class SphereBasis:
    """Orthonormal real harmonics up to lmax sampled on an angular quadrature."""

    def __init__(self, lmax: int, quad: AngularQuadrature | None = None):
        quad = quad or AngularQuadrature.for_degree(lmax)
        if quad.exactness < 2 * lmax:
            raise QuadratureExactnessError(
                f"quadrature exact to degree {quad.exactness} cannot resolve products up to {2 * lmax}"
            )
        self.lmax = lmax
        self.quad = quad
        self.modes = mode_list(lmax)
        self.degrees = mode_degrees(lmax)
        self.eigenvalues = self.degrees * (self.degrees + 1)
        th, ph = quad.theta, quad.phi
        Y = np.empty((quad.size, len(self.modes)))
        dT = np.empty_like(Y)
        dP = np.empty_like(Y)
        for j, (l, m) in enumerate(self.modes):
            Y[:, j], dT[:, j], dP[:, j] = real_sph_harm(l, m, th, ph, derivatives=True)
        self.Y = Y
        self.dY_theta = dT
        self.dY_phi_over_sin = dP / np.sin(th)[:, None]
        self.analysis = (Y * quad.weights[:, None]).T

    @property
    def size(self) -> int:
        return len(self.modes)

    def decompose(self, samples: np.ndarray, lmax: int | None = None) -> np.ndarray:
        """Mode coefficients of samples[..., nodes] (last axis are quadrature nodes)."""
        if lmax is not None and lmax > self.lmax:
            raise QuadratureExactnessError(f"degree {lmax} exceeds the basis degree {self.lmax}")
        c = samples @ self.analysis.T
        if lmax is not None:
            c = c[..., : n_modes(lmax)]
        return c

    def recompose(self, coeffs: np.ndarray) -> np.ndarray:
        k = coeffs.shape[-1]
        return coeffs @ self.Y[:, :k].T

    def surface_gradient_norm(self, coeffs: np.ndarray) -> np.ndarray:
        """|grad_S f| on the nodes for f given by mode coefficients."""
        k = coeffs.shape[-1]
        gt = coeffs @ self.dY_theta[:, :k].T
        gp = coeffs @ self.dY_phi_over_sin[:, :k].T
        return np.sqrt(gt * gt + gp * gp)

    def eval_at(self, coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Evaluate coefficient vectors at arbitrary unit vectors x[..., 3]."""
        _, th, ph = to_spherical(x)
        out = 0.0
        for j, (l, m) in enumerate(self.modes[: coeffs.shape[-1]]):
            out = out + coeffs[..., j] * real_sph_harm(l, m, th, ph)
        return out
