"""Collocation nodes, node-sampled fields and the weighted norms used by the global solver.

Each unit ball B(x_i, 1) is sampled on the cylindrical grid t = -log|x - x_i| of its BallSolver times
an angular product rule.  Each shell 1 <= |x - x_i| <= 2 is sampled on Chebyshev-Lobatto radii times a
finer angular rule.  Beyond the shells a field is carried by exterior multipole coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .balance import Configuration
from .harmonics import AngularQuadrature, SphereBasis, n_modes, solid_harmonics
from .interior import BallSolver

__all__ = [
    "chebyshev_lobatto",
    "symmetric_quadrature",
    "Discretization",
    "WeightedField",
    "dyadic_norm",
    "weighted_norm",
    "weighted_norm_parts",
    "evaluate_multipoles",
    "write_field_csv",
]


def chebyshev_lobatto(n: int, a: float, b: float):
    """Ascending Chebyshev-Lobatto nodes on [a, b] with differentiation matrix D and
    cumulative integration matrix Q, (Q g)_k = int_a^{r_k} g."""
    if n < 3:
        raise ValueError("need at least three nodes")
    x = -np.cos(np.pi * np.arange(n) / (n - 1))
    C = np.polynomial.chebyshev
    V = C.chebvander(x, n - 1)
    Vinv = np.linalg.inv(V)
    dV = np.empty_like(V)
    iV = np.empty_like(V)
    for m in range(n):
        e = np.zeros(n)
        e[m] = 1.0
        dV[:, m] = C.chebval(x, C.chebder(e))
        iV[:, m] = C.chebval(x, C.chebint(e, lbnd=-1))
    half = 0.5 * (b - a)
    r = a + half * (x + 1)
    return r, dV @ Vinv / half, iV @ Vinv * half


def symmetric_quadrature(lmax: int, extra: int = 2, multiple: int = 12) -> AngularQuadrature:
    """Product rule for degree lmax + extra whose azimuth count is a multiple of `multiple`, so that
    rotations about the polar axis by 2 pi / 3 or pi / 2 permute the nodes."""
    L = lmax + extra
    n_phi = int(math.ceil((2 * L + 2) / multiple) * multiple)
    return AngularQuadrature(L + 1, n_phi)


class Discretization:
    """Nodes and per-ball solvers for a configuration (N = 3 only)."""

    def __init__(self, config: Configuration, lmax: int = 8, lext: int = 12, tgrid_per_period: int = 2048,
                 n_shell: int = 24, periods: float = 3.0, extra: float = 10.0, ang_extra: int = 2):
        if config.dim != 3:
            raise NotImplementedError("the harmonic machinery is implemented for N = 3")
        if lext < lmax:
            raise ValueError("exterior degree must not be below the interface degree")
        self.config = config
        self.dim = config.dim
        self.lmax, self.lext = lmax, lext
        self.tgrid_per_period = tgrid_per_period
        cache: dict[tuple[float, float], BallSolver] = {}
        self.ball_solvers = []
        for e, R in zip(config.eps_i, config.R):
            key = (float(e), float(R))
            if key not in cache:
                cache[key] = BallSolver(e, R, self.dim, lmax, tgrid_per_period, periods, extra)
            self.ball_solvers.append(cache[key])
        self.ball_basis = SphereBasis(lmax, symmetric_quadrature(lmax, ang_extra))
        self.shell_basis = SphereBasis(lext, symmetric_quadrature(lext, ang_extra))
        self.shell_r, self.shell_D, self.shell_Q = chebyshev_lobatto(n_shell, 1.0, 2.0)
        self.a = (self.dim - 2) / 2

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def modes(self) -> int:
        return n_modes(self.lmax)

    @property
    def modes_ext(self) -> int:
        return n_modes(self.lext)

    def t(self, i: int) -> np.ndarray:
        return self.ball_solvers[i].t

    def ball_offsets(self, i: int, rows=slice(None)) -> np.ndarray:
        r = np.exp(-self.t(i)[rows])
        return r[:, None, None] * self.ball_basis.quad.points[None, :, :]

    def shell_offsets(self, i: int) -> np.ndarray:
        return self.shell_r[:, None, None] * self.shell_basis.quad.points[None, :, :]

    def zeros(self) -> "WeightedField":
        nb = self.ball_basis.quad.size
        ns = self.shell_basis.quad.size
        return WeightedField([np.zeros((len(self.t(i)), nb)) for i in range(self.n)],
                             [np.zeros((len(self.shell_r), ns)) for _ in range(self.n)])

    def far_points(self, n_spheres: int = 5, quad: AngularQuadrature | None = None) -> np.ndarray:
        """Points on spheres about the centroid, starting outside every shell and doubling in radius."""
        c = self.config.points.mean(axis=0)
        R0 = float(np.max(np.linalg.norm(self.config.points - c, axis=1))) + 3.0
        quad = quad or AngularQuadrature(8, 16)
        radii = R0 * 2.0 ** np.arange(n_spheres)
        return (c + radii[:, None, None] * quad.points[None]).reshape(-1, 3)

    def ball_modes_to_values(self, i: int, modes: np.ndarray) -> np.ndarray:
        """Node values of r^{-(N-2)/2} sum_j w_j(t) Y_j from mode functions w[t, j]."""
        return np.exp(self.a * self.t(i))[:, None] * self.ball_basis.recompose(modes)

    def ball_values_to_source_modes(self, i: int, values: np.ndarray) -> np.ndarray:
        """Source mode functions f_j(t) = e^{-(N+2)t/2} <f, Y_j> of node values."""
        c = self.ball_basis.decompose(values, self.lmax)
        return np.exp(-(self.dim + 2) / 2 * self.t(i))[:, None] * c

    def project(self, f: "WeightedField") -> "WeightedField":
        """Truncate to degree lmax in the balls and lext in the shells."""
        balls = [self.ball_basis.recompose(self.ball_basis.decompose(b, self.lmax)) for b in f.balls]
        shells = [self.shell_basis.recompose(self.shell_basis.decompose(s, self.lext)) for s in f.shells]
        return WeightedField(balls, shells, None if f.far is None else f.far.copy())


@dataclass
class WeightedField:
    """Samples on the ball and shell nodes; `far` holds exterior multipole coefficients
    (orthonormal modes, shape (n, modes_ext)) describing the field outside the shells."""

    balls: list[np.ndarray]
    shells: list[np.ndarray]
    far: np.ndarray | None = field(default=None)

    def copy(self) -> "WeightedField":
        return WeightedField([b.copy() for b in self.balls], [s.copy() for s in self.shells],
                             None if self.far is None else self.far.copy())

    def _combine(self, other, op):
        if isinstance(other, WeightedField):
            far = None
            if self.far is not None and other.far is not None and op in (np.add, np.subtract):
                far = op(self.far, other.far)
            elif op in (np.add, np.subtract) and (self.far is None) != (other.far is None):
                far = self.far if other.far is None else (other.far if op is np.add else -other.far)
            return WeightedField([op(a, b) for a, b in zip(self.balls, other.balls)],
                                 [op(a, b) for a, b in zip(self.shells, other.shells)], far)
        far = op(self.far, other) if (self.far is not None and op is np.multiply) else None
        return WeightedField([op(a, other) for a in self.balls], [op(a, other) for a in self.shells], far)

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def map(self, fn) -> "WeightedField":
        return WeightedField([fn(b) for b in self.balls], [fn(s) for s in self.shells])

    def min(self) -> float:
        return float(min(min(np.min(b) for b in self.balls), min(np.min(s) for s in self.shells)))

    def max_abs(self) -> float:
        return float(max(max(np.max(np.abs(b)) for b in self.balls), max(np.max(np.abs(s)) for s in self.shells)))


def dyadic_norm(d, values, grads=None, mu: float = 0.0, d_max: float = 1.0, per_octave: int = 32) -> float:
    """sup over annuli sigma <= d <= 2 sigma inside d <= d_max of sigma^{-mu}(sup|u| + sigma sup|grad u|).

    sigma runs over a geometric grid with `per_octave` values per factor two; grads=None gives the
    k = 0 version.  Annuli reaching below the smallest sample radius use the samples they contain.
    """
    d = np.asarray(d, dtype=float).ravel()
    u = np.abs(np.asarray(values, dtype=float)).ravel()
    keep = (d > 0) & (d <= d_max * (1 + 1e-12))
    d, u = d[keep], u[keep]
    if d.size == 0:
        return 0.0
    b = np.floor(per_octave * np.log2(d_max / d) + 1e-9).astype(int)
    b = np.maximum(b, 0)
    nb = int(b.max()) + 1
    U = np.zeros(nb + per_octave)
    np.maximum.at(U, b, u)
    win_u = np.lib.stride_tricks.sliding_window_view(U, per_octave)[:nb].max(axis=1)
    sigma = d_max * 2.0 ** (-(np.arange(nb) + per_octave) / per_octave)
    term = win_u
    if grads is not None:
        g = np.abs(np.asarray(grads, dtype=float)).ravel()[keep]
        G = np.zeros(nb + per_octave)
        np.maximum.at(G, b, g)
        term = term + sigma * np.lib.stride_tricks.sliding_window_view(G, per_octave)[:nb].max(axis=1)
    return float(np.max(sigma ** (-mu) * term))


def evaluate_multipoles(config: Configuration, coeffs: np.ndarray, x: np.ndarray, lmax: int) -> np.ndarray:
    """Sum over centres of coeffs[i, j] |x - x_i|^{-l-1} Y_j at absolute points x[..., 3]."""
    out = np.zeros(x.shape[:-1])
    for i in range(config.n):
        out += solid_harmonics(lmax, x - config.points[i], exterior=True) @ coeffs[i, : n_modes(lmax)]
    return out


def _ball_sup(disc: Discretization, i: int, vals: np.ndarray, k: int):
    t = disc.t(i)
    r = np.exp(-t)
    sup_u = np.max(np.abs(vals), axis=1)
    if k == 0:
        return r, sup_u, None
    h = t[1] - t[0]
    dt = np.gradient(vals, h, axis=0, edge_order=2)
    dr = -dt / r[:, None]
    c = disc.ball_basis.decompose(vals, disc.lmax)
    tang = disc.ball_basis.surface_gradient_norm(c) / r[:, None]
    grad = np.sqrt(dr * dr + tang * tang)
    return r, sup_u, np.max(grad, axis=1)


def _shell_sup(disc: Discretization, vals: np.ndarray, k: int):
    sup_u = float(np.max(np.abs(vals)))
    if k == 0:
        return sup_u, 0.0
    dr = disc.shell_D @ vals
    c = disc.shell_basis.decompose(vals, disc.lext)
    tang = disc.shell_basis.surface_gradient_norm(c) / disc.shell_r[:, None]
    return sup_u, float(np.max(np.sqrt(dr * dr + tang * tang)))


def weighted_norm_parts(f: WeightedField, disc: Discretization, mu: float, k: int = 1,
                        mu_ext: float | None = 2.0) -> dict:
    """Pieces of the weighted norm: per-ball dyadic sup near the singular points, the plain
    C^k sup on the shells, and the far-field sup of |x|^{N - mu_ext}(|u| + k|x||grad u|)."""
    parts = {"balls": [], "shells": [], "far": 0.0}
    for i, vals in enumerate(f.balls):
        r, su, sg = _ball_sup(disc, i, vals, k)
        parts["balls"].append(dyadic_norm(r, su, sg, mu))
    for vals in f.shells:
        su, sg = _shell_sup(disc, vals, k)
        parts["shells"].append(su + k * sg)
    if f.far is not None and mu_ext is not None:
        x = disc.far_points()
        c = disc.config.points.mean(axis=0)
        rad = np.linalg.norm(x - c, axis=1)
        u = evaluate_multipoles(disc.config, f.far, x, disc.lext)
        w = rad ** (disc.dim - mu_ext)
        val = w * np.abs(u)
        if k:
            h = 1e-5 * rad
            g2 = np.zeros_like(rad)
            for e in np.eye(3):
                up = evaluate_multipoles(disc.config, f.far, x + h[:, None] * e, disc.lext)
                um = evaluate_multipoles(disc.config, f.far, x - h[:, None] * e, disc.lext)
                g2 += ((up - um) / (2 * h)) ** 2
            val = val + w * rad * np.sqrt(g2)
        parts["far"] = float(np.max(val))
    return parts


def weighted_norm(f: WeightedField, disc: Discretization, mu: float, k: int = 1, mu_ext: float | None = 2.0) -> float:
    """Weighted C^k norm (k in {0, 1}); the Holder seminorm is replaced by the gradient sup."""
    p = weighted_norm_parts(f, disc, mu, k, mu_ext)
    return float(max(max(p["balls"]), max(p["shells"]), p["far"]))


def write_field_csv(f: WeightedField, disc: Discretization, path) -> None:
    """Node coordinates and values, one row per node: region,index,x,y,z,value."""
    with open(path, "w") as fh:
        fh.write("region,index,x,y,z,value\n")
        for i in range(disc.n):
            xs = disc.config.points[i] + disc.ball_offsets(i)
            for p, v in zip(xs.reshape(-1, 3), f.balls[i].ravel()):
                fh.write(f"ball,{i},{p[0]!r},{p[1]!r},{p[2]!r},{v!r}\n")
            xs = disc.config.points[i] + disc.shell_offsets(i)
            for p, v in zip(xs.reshape(-1, 3), f.shells[i].ravel()):
                fh.write(f"shell,{i},{p[0]!r},{p[1]!r},{p[2]!r},{v!r}\n")
