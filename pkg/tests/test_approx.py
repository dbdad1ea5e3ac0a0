import numpy as np
import pytest

from yamabe_gluing.approx import CutoffFamily, eval_approx, eval_wbar, smoothstep7
from yamabe_gluing.delaunay import SingularPointError
from yamabe_gluing.harmonics import AngularQuadrature


def _sphere(center, r, quad=AngularQuadrature(6, 12)):
    return center + r * quad.points


def test_smoothstep_endpoints_and_derivatives():
    S, dS, d2S = smoothstep7(np.array([0.0, 1.0]))
    assert np.allclose(S, [0, 1]) and np.allclose(dS, 0) and np.allclose(d2S, 0)
    x = np.linspace(0, 1, 2001)
    S, dS, _ = smoothstep7(x)
    assert np.all(np.diff(S) >= 0)
    assert np.allclose(np.gradient(S, x), dS, atol=1e-4)
    c1, c2 = CutoffFamily.derivative_constants()
    assert c1 == pytest.approx(35 / 16, rel=1e-6)
    assert c2 > 0


def test_error_term_vanishes_inside_rho(triangle, triangle_approx):
    for i in range(triangle.n):
        for r in (0.05, 0.5, 0.99):
            y = _sphere(np.zeros(3), r * triangle.rho_i[i])
            _, z = triangle_approx.evaluate(y, anchor=i, with_error=True)
            assert np.max(np.abs(z)) == 0.0


def test_error_term_is_small_where_wbar_is_exact(triangle, triangle_approx):
    # outside every 2 rho_i, ubar = wbar is harmonic, so only the nonlinear term remains
    x = _sphere(triangle.points.mean(axis=0), 20.0)
    u, z = eval_approx(triangle_approx, x, with_error=True)
    w = eval_wbar(triangle, x)
    assert np.allclose(u, w, rtol=0, atol=0)
    assert np.allclose(z, 0.75 * w**5, rtol=1e-12)


def test_wbar_is_harmonic(triangle):
    x = np.array([[2.3, 1.1, 0.7]])
    h = 1e-2
    f = lambda y: eval_wbar(triangle, y)[0]
    lap = sum(-f(x + 2 * h * e) + 16 * f(x + h * e) - 30 * f(x) + 16 * f(x - h * e) - f(x - 2 * h * e)
              for e in np.eye(3)) / (12 * h * h)
    assert abs(lap) <= 1e-7 * f(x)
    with pytest.raises(SingularPointError):
        eval_wbar(triangle, triangle.points[:1])


def test_ubar_positive_and_continuous_across_cutoff(triangle, triangle_approx):
    i = 0
    rho = triangle.rho_i[i]
    r = np.linspace(0.5 * rho, 3 * rho, 4001)
    theta = np.array([0.6, 0.0, 0.8])
    u = triangle_approx.evaluate(r[:, None] * theta, anchor=i)
    assert np.all(u > 0)
    jumps = np.abs(np.diff(u))
    assert np.max(jumps) <= 20 * np.median(jumps) + 1e-14


def test_ubar_matches_delaunay_piece_inside_rho(triangle, triangle_approx):
    y = _sphere(np.zeros(3), 0.5 * triangle.rho_i[1])
    assert np.allclose(triangle_approx.evaluate(y, anchor=1), triangle_approx.delaunay_piece(1, y), rtol=1e-14)


def test_eval_approx_absolute_matches_anchored(triangle, triangle_approx):
    y = _sphere(np.zeros(3), 0.7 * triangle.rho_i[2])
    a = triangle_approx.evaluate(y, anchor=2)
    b = eval_approx(triangle_approx, triangle.points[2] + y)
    assert np.allclose(a, b, rtol=1e-9)


def test_matching_moments_are_small_for_balanced_configuration(triangle, triangle_approx):
    rho = triangle.rho
    for j in range(4):
        m, dm = triangle_approx.matching_moments(0, j)
        assert abs(m) < 0.05 * triangle.eps and abs(dm) < 0.05 * triangle.eps / rho
