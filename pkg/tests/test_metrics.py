"""
Tests for test-function banks, operator norms, rescalings and weak convergence.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.lab.exceptions import ParameterError
from app.lab.fields import Field, Grid, TailModel
from app.lab.kernels import KernelSpec, OperatorSpec, make_fractional_kernel, sine_x_coefficient
from app.lab.metrics import (
    DifferenceOperator,
    coefficient_gap_majorant,
    cordes_nirenberg_experiment,
    generate_test_bank,
    half_cylinder,
    member_normalization,
    operator_norm,
    rescale_general,
    rescale_operator,
    scale_norm,
    scaled_operator,
    spatial_quotient,
    weak_convergence_test,
)
from app.lab.nonlocal_eval import apply_operator, linear_apply
from app.lab.regularity import flatness_sequence

WEAK_INDICES = [1, 2, 4, 8, 64]


@pytest.fixture(scope="module")
def bank():
    return generate_test_bank(11, 4)


def _wave(grid: Grid) -> Field:
    return Field.from_function(
        grid, lambda p, t: np.sin(2.0 * p[..., 0]) * np.exp(-p[..., 0] ** 2), [0.0], TailModel.zero()
    )


def test_bank_is_deterministic(bank):
    again = generate_test_bank(11, 4)
    assert bank.M == again.M
    for first, second in zip(bank.members, again.members):
        assert_array_equal(first.center, second.center)
        assert first.hessian.tolist() == second.hessian.tolist()
    other = generate_test_bank(12, 4)
    assert other.M != bank.M


def test_bank_members_are_normalized(bank):
    assert len(bank) == 4
    assert all(M > 0.0 for M in bank.M)
    assert all(np.abs(member.center).max() <= 0.5 for member in bank.members)


@pytest.mark.parametrize("size", [0, -3])
def test_bank_size_must_be_positive(size):
    with pytest.raises(ParameterError):
        generate_test_bank(1, size)


def test_bank_grid_dimension():
    with pytest.raises(ParameterError):
        generate_test_bank(1, 2, n=1, grid=Grid(2, 0.25, 4.0))


def test_operator_norm_trace(bank):
    estimate = operator_norm(OperatorSpec.pucci_plus(1, 1.0, 2.0), bank)
    assert len(estimate.trace) == len(bank)
    assert all(a <= b for a, b in zip(estimate.trace, estimate.trace[1:]))
    assert estimate.value == estimate.trace[-1]
    assert estimate.lower_bound
    assert estimate.seed == 11


def test_scale_norm_dominates_single_scale(bank):
    op = OperatorSpec.linear(KernelSpec(1, 1.0, sine_x_coefficient(1.0, 0.5), 2.0))
    single = operator_norm(op, bank)
    multi = scale_norm(op, bank, betas=(1.0, 0.5))
    assert multi.value >= single.value - 1e-12
    assert len(multi.details["per_beta"]) == 2


def test_pucci_is_rescale_invariant():
    op = OperatorSpec.pucci_minus(1, 1.2, 2.0)
    assert rescale_operator(op, 0.5) is op
    assert rescale_general(op, 3.0, 0.5, 0.5**1.2) is op
    with pytest.raises(ParameterError):
        rescale_general(op, 1.0, 0.5, 1.0)


@pytest.mark.parametrize("beta", [0.0, 1.5, -0.25])
def test_rescale_range(beta):
    with pytest.raises(ParameterError):
        rescale_operator(OperatorSpec.linear(make_fractional_kernel(1, 1.0)), beta)


def test_rescale_general_rejects_nonpositive():
    with pytest.raises(ParameterError):
        rescale_general(OperatorSpec.linear(make_fractional_kernel(1, 1.0)), 0.0, 0.5, 0.5)


def test_rescalings_compose(rng):
    op = OperatorSpec.linear(KernelSpec(1, 0.8, sine_x_coefficient(1.0, 0.5), 2.0))
    twice = rescale_operator(rescale_operator(op, 0.5), 0.5).kernels[0].coefficient
    once = rescale_operator(op, 0.25).kernels[0].coefficient
    x = rng.uniform(-4.0, 4.0, size=(16, 1))
    y = rng.uniform(-4.0, 4.0, size=(16, 1))
    assert_allclose(twice(x, 0.0, y), once(x, 0.0, y), rtol=1e-14)


def test_scaled_operator_is_linear(grid_1d):
    op = OperatorSpec.linear(make_fractional_kernel(1, 1.0, 1.0, 2.0))
    u = _wave(grid_1d)
    points = [0.0, 0.25]
    assert_allclose(
        apply_operator(scaled_operator(op, 2.0), u, points, 0.0),
        2.0 * apply_operator(op, u, points, 0.0),
        rtol=1e-12,
        atol=1e-12,
    )
    with pytest.raises(ParameterError):
        scaled_operator(OperatorSpec.pucci_plus(1, 1.0, 2.0), 2.0)


def test_difference_operator_needs_common_order():
    with pytest.raises(ParameterError):
        DifferenceOperator(OperatorSpec.pucci_plus(1, 1.0, 2.0), OperatorSpec.pucci_plus(1, 1.5, 2.0))


def test_coefficient_gap_majorant(grid_1d):
    # even profile: every second difference at 0 is negative, so the bound is attained there
    u = Field.from_function(grid_1d, lambda p, t: np.exp(-p[..., 0] ** 2), [0.0], TailModel.zero())
    points = np.array([0.0, 0.3, -0.5])
    eta = 0.2
    base = linear_apply(make_fractional_kernel(1, 1.0, 1.0, 2.0), u, points, 0.0)
    shifted = linear_apply(make_fractional_kernel(1, 1.0, 1.0 + eta, 2.0), u, points, 0.0)
    gap = np.abs(shifted - base)
    bound = coefficient_gap_majorant(u, points, 0.0, 1.0, eta)
    assert np.all(gap > 0.0)
    assert np.all(gap <= bound + 1e-12)
    assert bound[0] == pytest.approx(gap[0], rel=1e-10)


def test_weak_convergence_rate(bank):
    sequence = [
        OperatorSpec.linear(KernelSpec(1, 1.0, sine_x_coefficient(1.0, 0.5 / k), 2.0)) for k in WEAK_INDICES
    ]
    report = weak_convergence_test(sequence, bank, indices=WEAK_INDICES)
    assert report.max_deviation[-1] == 0.0
    assert all(a >= b for a, b in zip(report.max_deviation, report.max_deviation[1:]))
    # deviations scale like 1/k - 1/64
    assert report.fitted_slope == pytest.approx(-1.0557, abs=0.01)


def test_weak_convergence_needs_operators(bank):
    with pytest.raises(ParameterError):
        weak_convergence_test([], bank)


def test_cordes_parameter_ranges(coarse_grid):
    with pytest.raises(ParameterError):
        cordes_nirenberg_experiment(1.0, grid=coarse_grid)
    with pytest.raises(ParameterError):
        cordes_nirenberg_experiment(0.1, sigma=1.0, grid=coarse_grid)


def test_cordes_flags_large_perturbation(coarse_grid):
    report, u = cordes_nirenberg_experiment(0.5, grid=coarse_grid)
    assert "eta_above_smallness_threshold" in report.flags
    assert not report.hypothesis_ok
    assert report.coefficient_gap <= 0.5
    assert u.times[-1] == 0.0
    # flatness is read on the x-difference quotients, not on u
    assert report.flatness == flatness_sequence(spatial_quotient(u), np.zeros(1), 1.5, lam=0.5)


def test_operator_norm_reads_every_eval_point(bank):
    op = OperatorSpec.pucci_plus(1, 1.0, 2.0)
    centers = np.array([member.center for member in bank.members])
    everywhere = operator_norm(op, bank)
    at_centers = operator_norm(op, bank, eval_points=centers)
    assert at_centers.value <= everywhere.value
    assert at_centers.value > 0.0
    far_away = operator_norm(op, bank, eval_points=[[3.0]])
    assert far_away.value == 0.0


def test_operator_norm_of_a_difference_with_itself(bank):
    op = OperatorSpec.linear(KernelSpec(1, 1.0, sine_x_coefficient(1.0, 0.5), 2.0))
    assert operator_norm(DifferenceOperator(op, op), bank).value == 0.0


def test_operator_norm_is_homogeneous(bank):
    op = OperatorSpec.linear(make_fractional_kernel(1, 1.0, 1.0, 2.0))
    single = operator_norm(op, bank).value
    assert operator_norm(scaled_operator(op, 2.0), bank).value == pytest.approx(2.0 * single, rel=1e-12)


def test_normalization_at_the_center_matches_the_bank(bank):
    member, norm = bank.members[0], bank.norms[0]
    assert member_normalization(member, bank, norm, member.center) >= bank.M[0] - 1e-12
    assert max(norm, member.quadratic_ratio(bank.grid, member.center)) == bank.M[0]


def test_scale_norm_audits_shifted_norms(bank):
    estimate = scale_norm(OperatorSpec.pucci_plus(1, 1.0, 2.0), bank, betas=(1.0,))
    assert estimate.details["shift_bounds_hold"]
    assert len(estimate.details["shifted_norms"]) == len(bank)


def test_half_cylinder_covers_space_and_time(bank):
    member, grid = bank.members[0], bank.grid
    points, times = half_cylinder(member, grid, 0.0, 1.0)
    inside = np.linalg.norm(grid.points - member.center, axis=-1) <= member.radius / 2.0 + 1e-12
    assert_array_equal(points, grid.points[inside])
    assert times[0] == 0.0
    assert_allclose(np.diff(times), -grid.h)
    assert times[-1] > -member.tau / 2.0
    assert times[-1] - grid.h <= -member.tau / 2.0 + 1e-12


def test_spatial_quotient_of_affine_field(grid_1d):
    u = Field.from_function(grid_1d, lambda p, t: 3.0 * p[..., 0] + 1.0, [0.0, 0.5])
    assert_allclose(spatial_quotient(u).values, 3.0, rtol=1e-12)
