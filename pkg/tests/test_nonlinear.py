import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yamabe_gluing.gluing import mtilde_norm, sample_approx
from yamabe_gluing.nonlinear import (
    ConvergenceError,
    DeficiencyState,
    Iterate,
    NonlinearSolver,
    PositivityError,
    _power_difference,
    picard_step,
    residual,
    symmetry_defect,
)


@settings(max_examples=100, deadline=None)
@given(u=st.floats(1e-3, 1e3), frac=st.floats(-0.9, 10.0), p=st.sampled_from([5.0, 3.0, 2.0]))
def test_power_difference_matches_direct_formula(u, frac, p):
    v = frac * u
    direct = (u + v) ** p - u**p
    assert _power_difference(np.array(u), np.array(v), p) == pytest.approx(direct, rel=1e-10, abs=1e-12 * u**p)


def test_power_difference_small_increment_is_linear():
    u, v = 2.0, 1e-12
    assert _power_difference(u, v, 5.0) == pytest.approx(5 * u**4 * v, rel=1e-9)


@pytest.fixture(scope="module")
def solver(triangle_disc, triangle_approx, triangle_model):
    return NonlinearSolver(triangle_disc, triangle_approx, model=triangle_model)


def test_residual_at_zero_is_the_error_term(triangle_disc, triangle_approx, solver):
    w = Iterate.zeros(triangle_disc)
    N0 = residual(solver, w.state, w.v, w.Lv)
    _, zeta = sample_approx(triangle_approx, triangle_disc, with_error=True)
    assert (N0 - zeta).max_abs() <= 1e-15 * zeta.max_abs()


def test_positivity_is_enforced(triangle_disc, triangle_approx, solver):
    ub = sample_approx(triangle_approx, triangle_disc)
    with pytest.raises(PositivityError):
        solver.residual(ub * -2.0, triangle_disc.zeros(), np.zeros(3), np.zeros((3, 3)))


def test_deficiency_state_norm(triangle):
    st_ = DeficiencyState(np.array([1.0, -2.0, 0.0]), np.ones((3, 3)))
    assert st_.norm(triangle) == pytest.approx(triangle.eps * 3 + triangle.eps * triangle.rho * 9)
    assert DeficiencyState.zeros(3, 3).norm(triangle) == 0.0


def test_solution_reduces_residual_and_stays_positive(triangle_solution):
    sol = triangle_solution
    assert sol.converged and sol.reduction >= 1e3
    assert all(f < 1 for f in sol.contraction_factors)
    assert sol.min_u > 0 and sol.u.min() == pytest.approx(sol.min_u)
    assert np.all(np.isfinite(sol.R)) and sol.alpha.shape == (3, 3)
    summary = sol.summary()
    assert summary["converged"] is True


def test_solution_is_a_fixed_point_of_picard_step(triangle_solution):
    sol = triangle_solution
    solver = NonlinearSolver(sol.disc, sol.approx.with_params(sol.R - sol.S, sol.a - sol.alpha), model=sol.model)
    w = Iterate(sol.v, sol.Lv, DeficiencyState(sol.S, sol.alpha))
    nxt = picard_step(solver, w)
    # measured in the norm the map contracts in; S alone (about 5e-8) sits at the residual's round-off floor
    step = mtilde_norm(sol.disc, nxt.v - w.v, nxt.state.S - sol.S, nxt.state.alpha - sol.alpha)
    assert step <= 1e-6 * w.norm(sol.disc)


def test_symmetry_of_triangle_solution(triangle_solution):
    d = symmetry_defect(triangle_solution)
    assert d["w"] < 1e-5
    with pytest.raises(ValueError):
        symmetry_defect(triangle_solution, order=5)


def test_ball_exit_is_reported(solver):
    with pytest.raises(ConvergenceError):
        solver.solve(max_iter=2, C0_max=1e-6)
