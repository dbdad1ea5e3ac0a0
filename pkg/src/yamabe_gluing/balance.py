"""Singular configurations and the balancing conditions fixing the Delaunay parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "BalancingError",
    "ConfigurationError",
    "Configuration",
    "balancing_residual",
    "solve_balancing",
    "compute_displacements",
    "make_configuration",
    "rescale",
    "feasible_scale",
    "PRESETS",
    "preset_points",
]


class BalancingError(RuntimeError):
    """The balancing system has no positive solution reachable by damped Newton."""


class ConfigurationError(ValueError):
    pass


def _distances(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    d = np.sqrt(np.sum(diff**2, axis=-1))
    return d


def balancing_residual(points, q, R, dim: int) -> np.ndarray:
    """Relative residual of sum_{i != i0} R_i^{(N-2)/2} R_{i0}^{(N-2)/2} q_i |x_i0 - x_i|^{2-N} = q_i0."""
    points = np.asarray(points, dtype=float)
    q = np.asarray(q, dtype=float)
    R = np.asarray(R, dtype=float)
    d = _distances(points)
    n = len(q)
    G = np.zeros((n, n))
    off = ~np.eye(n, dtype=bool)
    G[off] = d[off] ** (2 - dim)
    h = R ** ((dim - 2) / 2)
    lhs = h * (G @ (q * h))
    return (lhs - q) / q


def solve_balancing(points, q, dim: int, tol: float = 1e-13, max_iter: int = 100) -> np.ndarray:
    """Solve the balancing equations for R by damped Newton in the variables log R_i."""
    points = np.asarray(points, dtype=float)
    q = np.asarray(q, dtype=float)
    n = len(q)
    if n < 2:
        raise ConfigurationError("at least two singular points are needed")
    d = _distances(points)
    if np.any(d[~np.eye(n, dtype=bool)] == 0):
        raise ConfigurationError("singular points must be distinct")
    if np.any(q <= 0):
        raise ConfigurationError("necksize ratios must be positive")
    G = np.zeros((n, n))
    off = ~np.eye(n, dtype=bool)
    G[off] = d[off] ** (2 - dim)
    k = (dim - 2) / 2

    # with h_i = R_i^{(N-2)/2} the system reads h_i0 (G (q h))_i0 = q_i0
    h0 = np.sqrt(q / (G @ q))
    y = np.log(h0)

    def F(y):
        h = np.exp(y)
        return h * (G @ (q * h)) / q - 1.0

    res = F(y)
    for _ in range(max_iter):
        if np.max(np.abs(res)) <= tol:
            break
        h = np.exp(y)
        Gqh = G @ (q * h)
        J = (np.diag(h * Gqh) + h[:, None] * G * (q * h)[None, :]) / q[:, None]
        step = np.linalg.solve(J, -res)
        lam = 1.0
        norm0 = np.max(np.abs(res))
        while lam > 1e-6:
            trial = F(y + lam * step)
            if np.all(np.isfinite(trial)) and np.max(np.abs(trial)) < (1 - 1e-4 * lam) * norm0:
                break
            lam *= 0.5
        else:
            raise BalancingError("damped Newton stalled; q may lie outside the admissible cone")
        y = y + lam * step
        res = F(y)
    else:
        raise BalancingError(f"no convergence after {max_iter} iterations (residual {np.max(np.abs(res)):.2e})")
    R = np.exp(y / k)
    if np.any(~np.isfinite(R)) or np.any(R <= 0):
        raise BalancingError("non-positive balancing parameter")
    return R


def compute_displacements(points, q, R, dim: int) -> np.ndarray:
    """a_i0 = -(1/q_i0) R_i0^{(N-2)/2} sum_{i != i0} q_i R_i^{(N-2)/2} |x_i0 - x_i|^{-N} (x_i0 - x_i)."""
    points = np.asarray(points, dtype=float)
    q = np.asarray(q, dtype=float)
    R = np.asarray(R, dtype=float)
    n = len(q)
    k = (dim - 2) / 2
    a = np.zeros_like(points)
    for i0 in range(n):
        acc = np.zeros(points.shape[1])
        for i in range(n):
            if i == i0:
                continue
            diff = points[i0] - points[i]
            acc += q[i] * R[i] ** k * np.linalg.norm(diff) ** (-dim) * diff
        a[i0] = -(R[i0] ** k) * acc / q[i0]
    return a


@dataclass(frozen=True)
class Configuration:
    """Singular set with necksize ratios, scale and balanced Delaunay parameters."""

    dim: int
    points: np.ndarray
    q: np.ndarray
    eps: float
    R: np.ndarray
    a: np.ndarray
    kappa: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def n(self) -> int:
        return len(self.q)

    @property
    def eps_i(self) -> np.ndarray:
        return self.eps * self.q

    @property
    def rho_i(self) -> np.ndarray:
        return self.eps_i ** (4 / (self.dim**2 - 4))

    @property
    def rho(self) -> float:
        return self.eps ** (4 / (self.dim**2 - 4))

    def min_separation(self) -> float:
        d = _distances(self.points)
        return float(np.min(d[~np.eye(self.n, dtype=bool)]))

    def residual(self) -> float:
        return float(np.max(np.abs(balancing_residual(self.points, self.q, self.R, self.dim))))

    def check(self) -> None:
        sep = self.min_separation()
        if sep <= 2.0:
            raise ConfigurationError(f"unit balls overlap (minimal separation {sep:.3f})")
        if np.any(self.R <= 1.0):
            raise ConfigurationError("each R_i must exceed 1")
        if np.any(2 * self.rho_i >= 1.0):
            raise ConfigurationError("eps too large: cutoff annuli leave the unit balls")

    def with_params(self, R=None, a=None) -> "Configuration":
        return replace(
            self,
            R=self.R if R is None else np.asarray(R, dtype=float),
            a=self.a if a is None else np.asarray(a, dtype=float),
        )

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "points": self.points.tolist(),
            "q": self.q.tolist(),
            "eps": self.eps,
            "R": self.R.tolist(),
            "a": self.a.tolist(),
            "kappa": self.kappa,
            "rho": self.rho_i.tolist(),
            "balancing_residual": self.residual(),
        }


def make_configuration(points, q, eps: float, dim: int, check: bool = True) -> Configuration:
    points = np.asarray(points, dtype=float)
    q = np.asarray(q, dtype=float)
    if points.ndim != 2 or points.shape[1] != dim or points.shape[0] != q.shape[0]:
        raise ConfigurationError("points must be an (n, dim) array matching q")
    R = solve_balancing(points, q, dim)
    a = compute_displacements(points, q, R, dim)
    cfg = Configuration(dim, points, q, float(eps), R, a)
    if check:
        cfg.check()
    return cfg


def rescale(config: Configuration, kappa: float) -> Configuration:
    """Dilate x_i -> kappa x_i.  The balancing equations are preserved by R_i -> kappa R_i,
    and the displacements, being homogeneous of degree -1 in the points, become a_i / kappa."""
    if not kappa > 0:
        raise ConfigurationError("dilation factor must be positive")
    return replace(
        config,
        points=config.points * kappa,
        R=config.R * kappa,
        a=config.a / kappa,
        kappa=config.kappa * kappa,
    )


def feasible_scale(config: Configuration, margin: float = 1.0) -> float:
    """Smallest dilation making unit balls disjoint (separation > 2 + margin) and all R_i > 1 + margin/2."""
    k1 = (2.0 + margin) / config.min_separation()
    k2 = (1.0 + margin / 2) / float(np.min(config.R))
    kappa = max(1.0, k1, k2)
    if not math.isfinite(kappa):
        raise ConfigurationError("configuration cannot be made feasible")
    return kappa


def preset_points(name: str) -> tuple[np.ndarray, np.ndarray, int]:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    spec = PRESETS[name]
    return np.array(spec["points"], dtype=float), np.array(spec["q"], dtype=float), spec["dim"]


def _polygon(n: int, side: float) -> list[list[float]]:
    circ = side / (2 * math.sin(math.pi / n))
    return [[circ * math.cos(2 * math.pi * k / n), circ * math.sin(2 * math.pi * k / n), 0.0] for k in range(n)]


def _tetrahedron(side: float) -> list[list[float]]:
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    v *= side / (2 * math.sqrt(2))
    return v.tolist()


# Sides are chosen so that the balls of radius 3 about the points are disjoint, which leaves room
# for the cutoff shells used by the exterior solver.
PRESETS = {
    "triangle-N3": {"dim": 3, "points": _polygon(3, 6.0), "q": [1.0, 1.0, 1.0], "eps": 1e-2},
    "square-N3": {"dim": 3, "points": _polygon(4, 6.0), "q": [1.0] * 4, "eps": 1e-2},
    "tetrahedron-N3": {"dim": 3, "points": _tetrahedron(6.0), "q": [1.0] * 4, "eps": 1e-2},
    "pair-N3": {"dim": 3, "points": [[-3.0, 0.0, 0.0], [3.0, 0.0, 0.0]], "q": [1.0, 1.0], "eps": 1e-2},
}
