"""
Tests for barriers, modulus tables and their compositions.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.lab.barriers import (
    Modulus,
    bump_barrier,
    compose_initial_modulus,
    compose_lateral_modulus,
    domination_constant,
    fit_modulus_exponent,
    interior_modulus_budget,
    lateral_candidate,
    measure_boundary_modulus,
    smooth_bump,
    verify_bump_barrier,
    verify_lateral_barrier,
)
from app.lab.exceptions import InsufficientDataError, ParameterError, PreconditionError
from app.lab.fields import Field


def test_smooth_bump_shape():
    points = np.array([[0.0], [0.5], [-0.9], [1.0], [3.0]])
    values = smooth_bump(points)
    assert values[0] == 0.0
    assert np.all((values >= 0.0) & (values <= 1.0))
    assert_allclose(values[3:], 1.0)


def test_bump_must_vanish_at_origin(coarse_grid):
    with pytest.raises(PreconditionError):
        bump_barrier(lambda p: np.full(np.asarray(p).shape[0], 0.5), coarse_grid, 1.0)


def test_bump_barrier_is_supersolution(coarse_grid):
    psi = bump_barrier(smooth_bump, coarse_grid, 1.0, Lambda=2.0)
    assert psi.params["slope"] > 0.0
    report = verify_bump_barrier(psi, coarse_grid, 1.0, Lambda=2.0)
    assert report.passed, report.residuals
    assert report.provenance == "bump"


def test_lateral_candidate_boundary_conditions(coarse_grid):
    psi = lateral_candidate(1.0, 1.0, 0.5)
    assert psi.kappa == 1.0
    report = verify_lateral_barrier(psi, 0.5, coarse_grid)
    assert report.conditions["zero_on_B1"]
    assert report.conditions["above_one_outside_B2"]
    assert report.parameters["C_t"] == 1.0


def test_lateral_candidate_rejects_nonpositive():
    with pytest.raises(ParameterError):
        lateral_candidate(0.0, 1.0, 0.5)


def test_modulus_must_vanish_at_zero():
    with pytest.raises(ParameterError):
        Modulus(np.array([0.1, 1.0]), np.array([0.0, 1.0]))


def test_modulus_extension_beyond_table():
    rho = Modulus(np.array([0.0, 1.0]), np.array([0.0, 1.0]))
    assert rho(2.0) == pytest.approx(2.0)
    assert rho.bounded(2.0) == pytest.approx(1.0)


def test_power_modulus_fit():
    fit = fit_modulus_exponent(Modulus.power(2.0, 0.5))
    assert fit["exponent"] == pytest.approx(0.5, abs=1e-9)
    assert fit["constant"] == pytest.approx(2.0, rel=1e-9)
    assert fit["r_squared"] == pytest.approx(1.0, abs=1e-9)


def test_concavity_defect():
    assert Modulus.power(1.0, 0.5).concavity_defect() == 0.0
    assert Modulus.power(1.0, 2.0).concavity_defect() > 0.0


def test_fit_needs_three_scales():
    with pytest.raises(InsufficientDataError):
        fit_modulus_exponent(Modulus(np.array([0.0, 0.5, 1.0]), np.array([0.0, 0.5, 1.0])))


def test_composition_with_zero_solution():
    rho = Modulus.power(1.0, 0.5)
    assert np.all(compose_lateral_modulus(rho, rho, 1.0, 0.5, 0.0).rho == 0.0)
    assert np.all(compose_initial_modulus(rho, rho, 0.0).rho == 0.0)


def test_initial_composition_bounded_by_any_radius():
    linear = Modulus.power(1.0, 1.0)
    composed = compose_initial_modulus(linear, linear, 1.0)
    # r = 0.05 at d = 1e-4 gives 0.05 + 2 (0.04 + 0.002)
    assert composed(1e-4) <= 0.134 + 1e-9
    assert composed.is_nondecreasing()
    assert composed.rho[-1] > composed(1e-4)


def test_domination_constant():
    fast = Modulus.power(2.0, 1.0)
    slow = Modulus.power(1.0, 1.0)
    assert domination_constant(fast, slow) == pytest.approx(2.0)
    assert domination_constant(slow, fast) == 1.0
    zero = Modulus(slow.d, np.zeros_like(slow.d))
    assert domination_constant(slow, zero) == float("inf")


def test_measured_modulus_of_linear_field(coarse_grid):
    u = Field.from_function(coarse_grid, lambda p, t: p[..., 0], np.linspace(-1.0, 0.0, 9))
    rho = measure_boundary_modulus(u)
    assert_allclose(rho.d[1:], [0.125, 0.25, 0.5, 1.0])
    assert_allclose(rho.rho[1:], rho.d[1:], rtol=1e-12)
    assert fit_modulus_exponent(rho)["exponent"] == pytest.approx(1.0, abs=1e-9)


def test_measured_modulus_needs_time_samples(coarse_grid):
    u = Field.from_function(coarse_grid, lambda p, t: p[..., 0])
    with pytest.raises(PreconditionError):
        measure_boundary_modulus(u)


def test_interior_budget_table():
    radii = np.geomspace(1e-2, 1.0, 8)
    modulus, table = interior_modulus_budget(Modulus.power(1.0, 0.5), 1.0, 1.0, 0.5, 1, 0.5, radii)
    assert list(table.columns) == ["r", "m_r"]
    assert len(table) == 8
    assert np.all(table["m_r"] > 0.0)
    assert modulus.is_nondecreasing()
