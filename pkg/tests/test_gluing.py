import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yamabe_gluing.balance import make_configuration, preset_points
from yamabe_gluing.gluing import (
    LinearizedProblem,
    ModelSolver,
    MultipoleExpansion,
    deficiency_to_parameters,
    dtn_operator,
    full_linearized_solve,
    kernel_system_matrix,
    manufactured_error,
    manufactured_field,
    parameters_to_deficiency,
    shell_cutoff,
)
from yamabe_gluing.harmonics import mode_degrees, n_modes
from yamabe_gluing.spaces import Discretization, evaluate_multipoles

D = 40.0


@pytest.fixture(scope="module")
def far_pair():
    cfg = make_configuration(np.array([[0.0, 0, 0], [D, 0, 0]]), np.ones(2), 1e-2, 3)
    return Discretization(cfg, lmax=3, tgrid_per_period=512)


def test_shell_cutoff_profile():
    chi, d1, d2 = shell_cutoff(np.array([0.5, 1.0, 2.0, 3.0]))
    assert np.allclose(chi, [1, 1, 0, 0]) and np.allclose(d1, 0) and np.allclose(d2, 0)


def test_exterior_dtn_of_isolated_balls(far_pair):
    S0 = dtn_operator(far_pair, "S", with_potential=False)
    assert S0.flavor == "S0"
    m = n_modes(3)
    deg = mode_degrees(3)
    # a decaying harmonic r^{-1-l} Y has radial derivative -(l + 1) on the unit sphere
    assert np.allclose(np.diag(S0.matrix)[:m], -(deg + 1), atol=2 / D**2)
    assert abs(abs(S0.matrix[0, m]) - 1 / D) < 0.05 / D
    assert S0.symmetry_defect < 1e-10


def test_interior_dtn_flavor_is_diagonal(far_pair):
    T = dtn_operator(far_pair, "T")
    assert np.count_nonzero(T.matrix - np.diag(np.diag(T.matrix))) == 0
    with pytest.raises(ValueError):
        dtn_operator(far_pair, "X")


def test_kernel_system_matrix_triangle_and_pair(triangle):
    M = kernel_system_matrix(triangle)
    assert np.allclose(np.sort(np.linalg.eigvalsh(M)), [0.5, 0.5, 2.0])
    pts, q, dim = preset_points("pair-N3")
    pair = make_configuration(pts, q, 1e-2, dim)
    Mp = kernel_system_matrix(pair)
    assert np.linalg.svd(Mp, compute_uv=False)[-1] < 1e-12
    assert np.allclose(Mp @ np.ones(2), 2 * np.ones(2)) or np.allclose(Mp @ np.array([1.0, -1.0]), 0)


def test_multipole_expansion_is_harmonic(triangle):
    rng = np.random.default_rng(0)
    coeffs = rng.standard_normal((triangle.n, n_modes(3)))
    field = MultipoleExpansion(triangle, coeffs, 3)
    x = np.array([[7.0, 5.0, 3.0]])
    assert np.allclose(field(x), evaluate_multipoles(triangle, coeffs, x, 3))
    h = 1e-2
    lap = sum(-field(x + 2 * h * e) + 16 * field(x + h * e) - 30 * field(x) + 16 * field(x - h * e)
              - field(x - 2 * h * e) for e in np.eye(3)) / (12 * h * h)
    assert abs(lap[0]) < 1e-7 * np.max(np.abs(coeffs))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_deficiency_parameter_round_trip(triangle_disc, seed):
    rng = np.random.default_rng(seed)
    K = rng.standard_normal((triangle_disc.n, triangle_disc.dim + 1))
    S, alpha = deficiency_to_parameters(triangle_disc, K)
    assert np.allclose(parameters_to_deficiency(triangle_disc, S, alpha), K, rtol=1e-13)


def test_model_solve_of_zero_is_zero(triangle_disc, triangle_model):
    sol = triangle_model.solve(triangle_disc.zeros())
    assert np.all(sol.K == 0) and np.all(sol.psi == 0) and sol.v.max_abs() == 0.0


def test_model_solve_is_linear(triangle_disc, triangle_model):
    _, f1 = manufactured_field(triangle_disc, triangle_model, seed=1)
    _, f2 = manufactured_field(triangle_disc, triangle_model, seed=2)
    s1, s2 = triangle_model.solve(f1), triangle_model.solve(f2)
    s = triangle_model.solve(f1 * 2.0 - f2)
    scale = max(s1.v.max_abs(), s2.v.max_abs())
    assert (s.v - (s1.v * 2.0 - s2.v)).max_abs() <= 1e-10 * scale
    # K is at the discretization floor here; the Born iteration is linear only up to its stopping tolerance
    assert np.max(np.abs(s.K - (2 * s1.K - s2.K))) <= 1e-10 * scale


@pytest.mark.parametrize("seed,k", [(0, 6), (1, 4), (2, 8)])
def test_manufactured_recovery(triangle_disc, triangle_model, seed, k):
    g, f = manufactured_field(triangle_disc, triangle_model, seed=seed, k=k)
    sol = triangle_model.solve(f)
    assert manufactured_error(triangle_disc, triangle_model, g, sol) < 1e-5
    assert sol.jumps["neumann"] < 1e-8 and sol.jumps["dirichlet"] < 1e-8


def test_gluing_matrix_invertible_for_triangle(triangle_disc):
    op = dtn_operator(triangle_disc, "S-T")
    assert op.sigma_min > 1e-3


def test_full_linearized_solve_of_zero(triangle_disc, triangle_approx, triangle_model):
    problem = LinearizedProblem(triangle_disc, triangle_approx, triangle_model)
    sol = full_linearized_solve(problem, triangle_disc.zeros(), max_iter=2)
    assert sol.norm == 0.0 and np.all(sol.S == 0) and np.all(sol.alpha == 0)


def test_full_linearized_solve_converges(triangle_disc, triangle_approx, triangle_model):
    problem = LinearizedProblem(triangle_disc, triangle_approx, triangle_model)
    _, f = manufactured_field(triangle_disc, triangle_model, seed=0)
    sol = full_linearized_solve(problem, f)
    assert sol.residuals[-1] < 1e-8
    assert all(c < 0.5 for c in sol.factors)
