import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from yamabe_gluing.balance import (
    PRESETS,
    ConfigurationError,
    balancing_residual,
    compute_displacements,
    feasible_scale,
    make_configuration,
    preset_points,
    rescale,
    solve_balancing,
)


def _triangle(d, N=3):
    tri = np.array([[0.0, 0.0], [d, 0.0], [d / 2, d * math.sqrt(3) / 2]])
    pts = np.zeros((3, N))
    pts[:, :2] = tri - tri.mean(axis=0)
    return pts


@pytest.mark.parametrize("N", [3, 4, 6])
def test_triangle_closed_form(N):
    d = 5.0
    pts = _triangle(d, N)
    R = solve_balancing(pts, np.ones(3), N)
    assert np.allclose(R, (d ** (N - 2) / 2) ** (1 / (N - 2)), rtol=1e-12)
    a = compute_displacements(pts, np.ones(3), R, N)
    assert np.allclose(a, -(3 / (2 * d * d)) * pts, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("N", [3, 5])
def test_pair_closed_form(N):
    d = 4.0
    pts = np.zeros((2, N))
    pts[1, 0] = d
    R = solve_balancing(pts, np.ones(2), N)
    assert np.allclose(R, d, rtol=1e-12)
    a = compute_displacements(pts, np.ones(2), R, N)
    assert np.allclose(a[0], -(pts[0] - pts[1]) / d**2, rtol=1e-12)


def test_collinear_middle_displacement_vanishes():
    pts = np.array([[-4.0, 0, 0], [0.0, 0, 0], [4.0, 0, 0]])
    cfg = make_configuration(pts, np.ones(3), 1e-2, 3, check=False)
    assert np.allclose(cfg.a[1], 0.0, atol=1e-15)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_balanced_and_feasible(name):
    pts, q, dim = preset_points(name)
    cfg = make_configuration(pts, q, PRESETS[name]["eps"], dim)
    assert cfg.residual() <= 1e-12
    assert np.all(cfg.R > 1)


def test_rescale_multiplies_R():
    pts = _triangle(3.0)
    cfg = make_configuration(pts, np.ones(3), 1e-2, 3, check=False)
    big = rescale(cfg, 2.0)
    direct = solve_balancing(2 * pts, np.ones(3), 3)
    assert np.allclose(big.R, direct, rtol=1e-12)
    assert np.allclose(big.R, 2 * cfg.R)
    assert abs(big.residual() - cfg.residual()) < 1e-12
    assert np.allclose(big.a, compute_displacements(2 * pts, np.ones(3), big.R, 3), rtol=1e-12)
    same = rescale(cfg, 1.0)
    assert np.array_equal(same.R, cfg.R) and np.array_equal(same.points, cfg.points)


def test_feasible_scale_makes_configuration_valid():
    pts = _triangle(1.0)
    cfg = make_configuration(pts, np.ones(3), 1e-3, 3, check=False)
    with pytest.raises(ConfigurationError):
        cfg.check()
    k = feasible_scale(cfg)
    rescale(cfg, k).check()


def test_bad_inputs():
    with pytest.raises(ConfigurationError):
        solve_balancing(np.zeros((2, 3)), np.ones(2), 3)
    with pytest.raises(ConfigurationError):
        solve_balancing(np.eye(3), -np.ones(3), 3)
    with pytest.raises(ConfigurationError):
        make_configuration(np.eye(3), np.ones(2), 1e-2, 3)
    with pytest.raises(ConfigurationError):
        rescale(make_configuration(_triangle(6.0), np.ones(3), 1e-2, 3), -1.0)


point_sets = st.lists(st.tuples(*[st.floats(-5, 5)] * 3), min_size=3, max_size=5).filter(
    lambda p: min(np.linalg.norm(np.subtract(a, b)) for i, a in enumerate(p) for b in p[i + 1:]) > 0.5)


@settings(max_examples=30, deadline=None)
@given(pts=point_sets, seed=st.integers(0, 2**32 - 1))
def test_permutation_and_rotation_equivariance(pts, seed):
    pts = np.array(pts)
    n = len(pts)
    rng = np.random.default_rng(seed)
    q = rng.uniform(0.8, 1.25, n)
    try:
        R = solve_balancing(pts, q, 3)
    except Exception:
        return  # q outside the admissible cone for this point set
    assert np.max(np.abs(balancing_residual(pts, q, R, 3))) <= 1e-12
    a = compute_displacements(pts, q, R, 3)
    perm = rng.permutation(n)
    Rp = solve_balancing(pts[perm], q[perm], 3)
    assert np.allclose(Rp, R[perm], rtol=1e-10)
    Q = Rotation.random(random_state=seed % (2**31)).as_matrix()
    Rr = solve_balancing(pts @ Q.T, q, 3)
    assert np.allclose(Rr, R, rtol=1e-10)
    ar = compute_displacements(pts @ Q.T, q, Rr, 3)
    assert np.allclose(ar, a @ Q.T, rtol=1e-9, atol=1e-12 * np.max(np.abs(a)))
