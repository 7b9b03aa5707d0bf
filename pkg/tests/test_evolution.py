"""
Tests for the explicit Dirichlet solver: CFL bounds, comparison and residuals.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.lab.exceptions import CFLViolationError, PreconditionError
from app.lab.fields import Field, Grid, TailModel
from app.lab.kernels import ConstantCoefficient, KernelSpec, OperatorSpec, make_fractional_kernel
from app.lab.nonlocal_eval import stencil_for
from app.lab.evolution import (
    DirichletProblem,
    Stepper,
    cached_stepper,
    cfl_timestep,
    comparison_violation,
    constant_rule,
    initial_state,
    kernel_weighted_level,
    monotonicity_audit,
    random_ordered_pair,
    residual_check,
    solve_dirichlet,
    step_explicit,
    time_lattice,
)


def _sine(amplitude: float, frequency: float, phase: float = 0.0):
    def rule(points, t):
        x = np.asarray(points, dtype=float)[..., 0]
        return amplitude * np.sin(frequency * x + t + phase)

    return rule


def _time_rule(points, t):
    return np.full(np.asarray(points).shape[0], float(t))


def test_cfl_timestep_formula(coarse_grid):
    op = OperatorSpec.pucci_plus(1, 1.0, 2.0)
    total = stencil_for(coarse_grid, 1.0).total_mass
    assert_allclose(cfl_timestep(coarse_grid, op), 1.0 / (4.0 * total), rtol=1e-14)


def test_time_lattice_has_even_steps(coarse_grid):
    op = OperatorSpec.linear(make_fractional_kernel(1, 0.6))
    record = time_lattice(coarse_grid, op, t0=-1.0, t1=0.0)
    assert record.steps % 2 == 0
    assert record.dt <= record.dt_max
    assert_allclose(record.dt * record.steps, 1.0, rtol=1e-12)
    assert record.to_dict()["W_tot"] == pytest.approx(record.total_mass * coarse_grid.h**0.6)


def test_oversized_step_is_rejected(coarse_grid):
    problem = DirichletProblem(OperatorSpec.pucci_plus(1, 1.0, 2.0), g=_sine(1.0, 1.0))
    stepper = Stepper(problem, coarse_grid)
    with pytest.raises(CFLViolationError):
        stepper.step(problem.initial_values(coarse_grid), -1.0, 2.0 * stepper.dt_max)


def test_step_cannot_leave_interval(coarse_grid):
    problem = DirichletProblem(OperatorSpec.pucci_plus(1, 1.0, 2.0), t0=-1.0, t1=-0.99)
    state = initial_state(problem, coarse_grid)
    with pytest.raises(PreconditionError):
        step_explicit(problem, state, 0.05)


def test_stepping_requires_L0_operator(coarse_grid):
    rogue = KernelSpec(1, 1.0, ConstantCoefficient(3.0), 2.0)
    with pytest.raises(PreconditionError):
        cfl_timestep(coarse_grid, OperatorSpec.linear(rogue))


def test_problem_rejects_empty_interval():
    with pytest.raises(PreconditionError):
        DirichletProblem(OperatorSpec.pucci_plus(1, 1.0, 1.0), t0=0.0, t1=0.0)


def test_kernel_weighted_level_of_constant():
    assert kernel_weighted_level(constant_rule(2.0), 2, 4.0, 0.7, 0.0) == pytest.approx(2.0, rel=1e-12)


@pytest.mark.parametrize(
    "operator",
    [OperatorSpec.pucci_plus(1, 1.0, 2.0), OperatorSpec.linear(make_fractional_kernel(1, 1.5))],
)
def test_randomized_comparison_ordered_in_all_data(operator, rng, coarse_grid):
    points = coarse_grid.points
    for _ in range(4):
        pair = random_ordered_pair(operator, rng)
        low, high = pair.lower, pair.upper
        for t in (-1.0, -0.8):
            assert np.all(low.g(points, t) < high.g(points, t))
            assert np.all(low.f(points, t) < high.f(points, t))
        assert np.all(low.initial(points) < high.initial(points))
        assert min(pair.lifts.values()) > 0.0
        assert comparison_violation(pair, coarse_grid) <= 1e-12


def test_ordered_pair_needs_positive_time_factor(rng):
    with pytest.raises(PreconditionError):
        random_ordered_pair(OperatorSpec.pucci_plus(1, 1.0, 2.0), rng, t0=-2.0, t1=-1.0)


def test_step_explicit_reuses_stepper(coarse_grid):
    problem = DirichletProblem(OperatorSpec.pucci_plus(1, 1.0, 2.0), g=_sine(1.0, 1.0), t0=-1.0, t1=-0.5)
    state = initial_state(problem, coarse_grid)
    cached_stepper.cache_clear()
    state = step_explicit(problem, state, state.cfl.dt)
    state = step_explicit(problem, state, state.cfl.dt)
    info = cached_stepper.cache_info()
    assert (info.misses, info.hits) == (1, 1)
    assert state.step == 2
    direct = Stepper(problem, coarse_grid)
    first = direct.step(problem.initial_values(coarse_grid), -1.0, state.cfl.dt)
    expected = direct.step(first, -1.0 + state.cfl.dt, state.cfl.dt)
    assert_allclose(state.values, expected, rtol=0.0, atol=0.0)


def test_maximum_principle(coarse_grid):
    op = OperatorSpec.linear(make_fractional_kernel(1, 1.5))
    u = solve_dirichlet(DirichletProblem(op, g=_sine(1.0, 2.0), t0=-1.0, t1=-0.5), coarse_grid)
    assert np.abs(u.values).max() <= 1.0 + 1e-12
    assert u.times[0] == -1.0 and u.times[-1] == -0.5


def test_constant_data_is_stationary(coarse_grid):
    problem = DirichletProblem(OperatorSpec.pucci_minus(1, 0.8, 2.0), g=constant_rule(0.5), t0=-1.0, t1=-0.9)
    u = solve_dirichlet(problem, coarse_grid)
    assert_allclose(u.values, 0.5, atol=1e-12)
    assert residual_check(u, problem, "sub").passed
    assert residual_check(u, problem, "super").passed


def test_residual_detects_growth(coarse_grid):
    problem = DirichletProblem(OperatorSpec.pucci_plus(1, 1.0, 2.0), g=_time_rule)
    candidate = Field.from_function(
        coarse_grid, _time_rule, np.linspace(-1.0, 0.0, 5), TailModel.explicit(_time_rule, lambda t: t)
    )
    sub = residual_check(candidate, problem, "sub")
    assert not sub.passed
    assert sub.max_violation == pytest.approx(1.0, abs=1e-9)
    assert residual_check(candidate, problem, "super").passed


def test_residual_rejects_unknown_sense(coarse_grid):
    problem = DirichletProblem(OperatorSpec.pucci_plus(1, 1.0, 2.0))
    candidate = Field.from_function(coarse_grid, _time_rule, [0.0, 1.0])
    with pytest.raises(PreconditionError):
        residual_check(candidate, problem, "both")


def test_update_map_is_monotone():
    grid = Grid(1, 0.125, 4.0)
    problem = DirichletProblem(OperatorSpec.pucci_plus(1, 1.0, 2.0), g=_sine(1.0, 2.0))
    dt = cfl_timestep(grid, problem.operator)
    worst = monotonicity_audit(problem, grid, problem.initial_values(grid), -1.0, dt)
    assert worst >= -1e-8
