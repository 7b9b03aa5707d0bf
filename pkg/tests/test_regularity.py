"""
Tests for seminorms, exponent fits, flatness sequences and time regularity.
"""

import numpy as np
import pytest

from app.lab.evolution import DirichletProblem
from app.lab.exceptions import InsufficientDataError, ParameterError
from app.lab.fields import Field
from app.lab.kernels import OperatorSpec
from app.lab.regularity import (
    ALPHA_CLAMP,
    Cylinder,
    counterexample_experiment,
    default_scales,
    fit_holder_exponent,
    flatness_sequence,
    parabolic_holder_seminorm,
    predicted_ring_slope,
    ring_datum,
    time_regularity_experiment,
)

STATIC_TIMES = [-1.0, -0.5, 0.0]


def _sqrt_abs(points, t):
    return np.sqrt(np.abs(points[..., 0]))


def _drifting_sine(points, t):
    return np.sin(points[..., 0]) + 0.5 * t


def test_default_scales_stop_at_two_spacings(grid_1d):
    assert default_scales(grid_1d) == [1.0, 0.5, 0.25, 0.125, 0.0625]


def test_holder_exponent_of_square_root(grid_1d):
    u = Field.from_function(grid_1d, _sqrt_abs, STATIC_TIMES)
    report = fit_holder_exponent(u, [0.0], 1.0)
    assert report.alpha_hat == pytest.approx(0.5, abs=1e-9)
    assert report.r_squared == pytest.approx(1.0, abs=1e-9)
    assert len(report.oscillations) == 5


def test_constant_field_exponent_is_clamped(grid_1d):
    u = Field(grid_1d, np.full((3,) + grid_1d.shape, 2.0), np.array(STATIC_TIMES))
    assert fit_holder_exponent(u, [0.0], 1.0).alpha_hat == ALPHA_CLAMP[1]


def test_exponent_fit_needs_scales(grid_1d):
    u = Field.from_function(grid_1d, _sqrt_abs, STATIC_TIMES)
    with pytest.raises(InsufficientDataError):
        fit_holder_exponent(u, [0.0], 1.0, scales=[1.0, 0.5])


def test_seminorm_of_linear_field(grid_1d):
    u = Field.from_function(grid_1d, lambda p, t: p[..., 0])
    value = parabolic_holder_seminorm(u, Cylinder((0.0,), 1.0, -1.0, 0.0), 1.0, 1.0)
    assert value == pytest.approx(1.0)


def test_seminorm_rejects_wrong_center(grid_1d):
    u = Field.from_function(grid_1d, lambda p, t: p[..., 0])
    with pytest.raises(ParameterError):
        parabolic_holder_seminorm(u, Cylinder((0.0, 0.0), 1.0, -1.0, 0.0), 1.0, 1.0)


def test_affine_field_is_flat(grid_1d):
    u = Field.from_function(grid_1d, lambda p, t: 2.0 + 3.0 * p[..., 0], STATIC_TIMES)
    report = flatness_sequence(u, [0.0], 1.5, lam=0.5, K_max=4)
    assert len(report.flatness) == 5
    assert not report.truncated
    for record in report.flatness:
        assert record.sup_error < 1e-12
        assert record.a_k == pytest.approx(2.0)
        assert record.b_k[0] == pytest.approx(3.0)


def test_flatness_truncates_below_grid_scale(grid_1d):
    u = Field.from_function(grid_1d, _sqrt_abs, STATIC_TIMES)
    report = flatness_sequence(u, [0.0], 1.5, lam=0.5, K_max=8)
    assert report.truncated
    assert report.flatness[-1].radius == pytest.approx(0.0625)
    assert report.decay_ratio is not None


def test_flatness_lambda_range(grid_1d):
    u = Field.from_function(grid_1d, _sqrt_abs, STATIC_TIMES)
    with pytest.raises(ParameterError):
        flatness_sequence(u, [0.0], 1.5, lam=1.0)


def test_predicted_ring_slope():
    assert predicted_ring_slope(1, 1.0) == pytest.approx(2.0 / 3.0)


def test_ring_datum_switches_on():
    g = ring_datum(0.5)
    points = np.array([[0.0], [2.5], [-2.5], [3.5]])
    assert np.all(g(points, -0.75) == 0.0)
    np.testing.assert_allclose(g(points, -0.25), [0.125, 1.125, 1.125, 0.125])


def test_time_regularity_bound(coarse_grid):
    problem = DirichletProblem(OperatorSpec.pucci_plus(1, 1.0, 2.0), g=_drifting_sine, t0=-1.0, t1=-0.75)
    report = time_regularity_experiment(problem, coarse_grid)
    assert report.bound_holds
    assert report.comparison_holds
    assert report.hypothesis_ok
    assert report.lipschitz_g == pytest.approx(0.5, rel=1e-6)
    assert report.M >= report.C0


def test_time_regularity_rejects_bad_modulus(coarse_grid):
    problem = DirichletProblem(OperatorSpec.pucci_plus(1, 1.0, 2.0), g=_drifting_sine)
    with pytest.raises(ParameterError):
        time_regularity_experiment(problem, coarse_grid, modulus="smooth")
    with pytest.raises(ParameterError):
        time_regularity_experiment(problem, coarse_grid, modulus="holder")


def test_counterexample_jump(grid_1d):
    report, u = counterexample_experiment(1.0, grid=grid_1d)
    assert report.pre_jump_sup <= 1e-12
    assert report.pre_jump_slope == 0.0
    assert report.jump_detected
    assert report.post_jump_slope > 0.5 * report.predicted_slope
    assert u.times[0] == -1.0


def test_no_jump_without_ring(grid_1d):
    report, _ = counterexample_experiment(1.0, grid=grid_1d, ring=False)
    assert not report.jump_detected
    assert report.predicted_slope == 0.0
