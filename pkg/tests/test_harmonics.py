import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yamabe_gluing.harmonics import (
    COORDINATE_NORMALIZATION,
    AngularQuadrature,
    QuadratureExactnessError,
    SphereBasis,
    eval_mode,
    mode_degrees,
    mode_list,
    n_modes,
    real_harmonics_all,
    real_sph_harm,
    solid_harmonics,
)


def test_mode_ordering():
    modes = mode_list(3)
    assert modes[0] == (0, 0)
    assert [l for l, _ in modes[1:4]] == [1, 1, 1]
    assert len(modes) == n_modes(3) == 16
    lam = mode_degrees(3) * (mode_degrees(3) + 1)
    assert lam[0] == 0 and np.all(lam[1:4] == 2) and lam[4] == 6


def test_low_modes_are_constant_and_coordinates():
    quad = AngularQuadrature.for_degree(4)
    x = quad.points
    assert np.allclose(eval_mode(0, x), 1 / COORDINATE_NORMALIZATION[0])
    for j in (1, 2, 3):
        assert np.allclose(eval_mode(j, x) * COORDINATE_NORMALIZATION[1], x[:, j - 1], atol=1e-14)


@pytest.mark.parametrize("lmax", [4, 8, 12])
def test_quadrature_exactness_on_products(lmax):
    basis = SphereBasis(lmax)
    G = basis.Y.T @ (basis.quad.weights[:, None] * basis.Y)
    assert np.max(np.abs(G - np.eye(basis.size))) <= 1e-13
    assert basis.quad.weights.sum() == pytest.approx(4 * math.pi, rel=1e-14)


def test_insufficient_quadrature_rejected():
    with pytest.raises(QuadratureExactnessError):
        SphereBasis(8, AngularQuadrature(5, 10))
    with pytest.raises(QuadratureExactnessError):
        SphereBasis(4).decompose(np.zeros(SphereBasis(4).quad.size), lmax=6)


def test_all_harmonics_match_individual():
    th = np.linspace(0.1, 3.0, 7)
    ph = np.linspace(0.0, 6.0, 7)
    A = real_harmonics_all(5, th, ph)
    for j, (l, m) in enumerate(mode_list(5)):
        assert np.allclose(A[:, j], real_sph_harm(l, m, th, ph), atol=1e-14)


@pytest.mark.parametrize("l,m", [(2, 1), (3, -2), (4, 0)])
def test_laplace_beltrami_eigenfunctions(l, m):
    th0, ph0, h = 1.1, 0.7, 1e-3
    f = lambda t, p: real_sph_harm(l, m, np.array(t), np.array(p))
    d_th = (math.sin(th0 + h / 2) * (f(th0 + h, ph0) - f(th0, ph0))
            - math.sin(th0 - h / 2) * (f(th0, ph0) - f(th0 - h, ph0))) / (h * h * math.sin(th0))
    d_ph = (f(th0, ph0 + h) - 2 * f(th0, ph0) + f(th0, ph0 - h)) / (h * h * math.sin(th0) ** 2)
    assert d_th + d_ph == pytest.approx(-l * (l + 1) * f(th0, ph0), abs=1e-5)


def test_solid_harmonics_are_harmonic():
    x = np.array([0.6, -0.8, 1.0])
    h = 1e-2
    for exterior in (False, True):
        f = lambda y: solid_harmonics(4, y, exterior)
        # fourth-order five-point stencil in each direction
        lap = sum(-f(x + 2 * h * e) + 16 * f(x + h * e) - 30 * f(x) + 16 * f(x - h * e) - f(x - 2 * h * e)
                  for e in np.eye(3)) / (12 * h * h)
        scale = np.max(np.abs(f(x))) / np.dot(x, x)
        assert np.max(np.abs(lap)) <= 1e-5 * scale


def test_decompose_unit_vectors():
    basis = SphereBasis(6)
    c = basis.decompose(basis.Y.T)
    assert np.allclose(c, np.eye(basis.size), atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lmax=st.integers(1, 10))
def test_round_trip_band_limited(seed, lmax):
    basis = SphereBasis(lmax)
    c = np.random.default_rng(seed).standard_normal(basis.size)
    assert np.max(np.abs(basis.decompose(basis.recompose(c)) - c)) <= 1e-12 * max(1.0, np.max(np.abs(c)))


def test_coefficient_decay_of_smooth_function():
    basis = SphereBasis(16)
    x = basis.quad.points
    c = basis.decompose(np.exp(x[:, 0] + 0.5 * x[:, 2]))
    deg = mode_degrees(16)
    per_degree = np.array([np.linalg.norm(c[deg == l]) for l in range(17)])
    # faster than any power: successive ratios keep shrinking
    assert per_degree[14] < 1e-12 * per_degree[0]
    assert per_degree[12] / per_degree[8] < (8 / 12) ** 20


def test_eval_at_matches_recompose():
    basis = SphereBasis(5)
    c = np.random.default_rng(1).standard_normal(basis.size)
    assert np.allclose(basis.eval_at(c, basis.quad.points), basis.recompose(c), atol=1e-13)
