"""
Tests for fields and the discrete nonlocal operators.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from app.lab.exceptions import DivergenceError, ParameterError, PreconditionError
from app.lab.fields import Field, Grid, TailModel
from app.lab.kernels import ConstantCoefficient, KernelSpec, OperatorSpec, make_fractional_kernel, sine_x_coefficient
from app.lab.nonlocal_eval import (
    apply_operator,
    ellipticity_audit,
    frozen_apply,
    linear_apply,
    node_data_for,
    pucci_minus,
    pucci_plus,
    second_difference,
    spectral_reference,
    stencil_for,
)


def _smooth_random_field(grid: Grid, rng: np.random.Generator) -> Field:
    amplitudes = rng.uniform(-1.0, 1.0, size=3)
    frequencies = rng.uniform(0.5, 3.0, size=(3, grid.n))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)

    def rule(points, t):
        p = np.asarray(points, dtype=float)
        return sum(a * np.sin(p @ k + ph) for a, k, ph in zip(amplitudes, frequencies, phases))

    return Field.from_function(grid, rule, [0.0], TailModel.zero())


def test_second_difference_of_quadratic(grid_1d):
    u = Field.from_function(grid_1d, lambda p, t: p[..., 0] ** 2)
    assert second_difference(u, 0.5, 0.0, 0.25) == pytest.approx(0.125, abs=1e-14)


def test_field_rejects_mismatched_values(grid_1d):
    with pytest.raises(ParameterError):
        Field(grid_1d, np.zeros((2, 5)), np.array([0.0, 1.0]))


def test_field_time_lookup_is_left_continuous(grid_1d):
    u = Field(grid_1d, np.stack([np.zeros(grid_1d.shape), np.ones(grid_1d.shape)]), np.array([0.0, 1.0]))
    assert u.time_index(0.999) == 0
    assert u.time_index(1.0) == 1
    with pytest.raises(PreconditionError):
        u.time_index(-0.5)


def test_grid_requires_integer_box(grid_1d):
    with pytest.raises(ParameterError):
        Grid(1, 0.3, 4.0)
    assert grid_1d.refined().h == pytest.approx(grid_1d.h / 2.0)


def test_constants_are_annihilated(grid_1d):
    u = Field(grid_1d, np.ones(grid_1d.shape), tail=TailModel.constant(1.0))
    K = make_fractional_kernel(1, 1.0)
    values = linear_apply(K, u, [0.0, 0.5, -0.75], 0.0)
    assert_allclose(values, 0.0, atol=1e-12)


def test_half_laplacian_matches_spectral_oracle():
    grid = Grid(1, 1.0 / 64.0, 8.0)
    u = Field.from_function(grid, lambda p, t: np.exp(-p[..., 0] ** 2))
    points = np.array([0.0, 0.5, -0.5])
    discrete = linear_apply(make_fractional_kernel(1, 1.0), u, points, 0.0)
    oracle = spectral_reference(1.0, lambda p: np.exp(-p[..., 0] ** 2), points)
    assert_allclose(discrete, oracle, rtol=1e-3)
    assert discrete[0] < 0.0


@pytest.mark.parametrize("sigma,min_order", [(0.5, 1.5), (1.5, 0.8)])
def test_convergence_order_against_oracle(sigma, min_order):
    def rule(p):
        return np.exp(-p[..., 0] ** 2)

    points = np.array([0.0, 0.5, -0.5])
    oracle = spectral_reference(sigma, rule, points)
    spacings = np.array([1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0])
    errors = []
    for h in spacings:
        u = Field.from_function(Grid(1, h, 8.0), lambda p, t: rule(p))
        discrete = linear_apply(make_fractional_kernel(1, sigma), u, points, 0.0)
        errors.append(np.max(np.abs(discrete - oracle)))
    order = np.polyfit(np.log(spacings), np.log(errors), 1)[0]
    assert order >= min_order


@pytest.mark.parametrize("sigma", [0.5, 1.0])
@pytest.mark.parametrize("beta", [0.5, 0.25])
def test_constant_kernel_scaling(sigma, beta, grid_1d):
    # u(x / beta) sees the operator scaled by beta^-sigma
    def rule(p, t):
        return np.exp(-p[..., 0] ** 2)

    u = Field.from_function(grid_1d, rule, [0.0], TailModel.zero())
    v = Field.from_function(grid_1d, lambda p, t: rule(p / beta, t), [0.0], TailModel.zero())
    K = make_fractional_kernel(1, sigma)
    points = np.array([0.0, 0.25 * beta])
    scaled = linear_apply(K, v, points, 0.0)
    reference = beta ** (-sigma) * linear_apply(K, u, points / beta, 0.0)
    assert_allclose(scaled, reference, rtol=5.0 * grid_1d.h ** (2.0 - sigma))


@pytest.mark.parametrize("n", [1, 2])
def test_pucci_duality(n, rng, grid_1d, grid_2d):
    grid = grid_1d if n == 1 else grid_2d
    points = grid.points[grid.interior_mask(1.0).reshape(-1)][:25]
    for _ in range(10):
        u = _smooth_random_field(grid, rng)
        plus = pucci_plus(-u, points, 0.0, 1.2, 2.0)
        minus = pucci_minus(u, points, 0.0, 1.2, 2.0)
        assert_allclose(plus, -minus, atol=1e-12)


def test_pucci_brackets_every_admissible_kernel(rng, grid_1d):
    u = _smooth_random_field(grid_1d, rng)
    points = np.array([0.0, 0.25, -0.5])
    upper = pucci_plus(u, points, 0.0, 0.7, 2.0)
    lower = pucci_minus(u, points, 0.0, 0.7, 2.0)
    for scale in (0.5, 1.0, 2.0):
        value = linear_apply(make_fractional_kernel(1, 0.7, scale, 2.0), u, points, 0.0)
        assert np.all(value <= upper + 1e-12)
        assert np.all(value >= lower - 1e-12)


def test_pucci_gap_at_a_cap(grid_1d):
    u = Field.from_function(grid_1d, lambda p, t: np.maximum(0.0, 1.0 - p[..., 0] ** 2) ** 2)
    upper = pucci_plus(u, [0.0], 0.0, 1.0, 2.0)
    lower = pucci_minus(u, [0.0], 0.0, 1.0, 2.0)
    middle = linear_apply(make_fractional_kernel(1, 1.0, 1.0, 2.0), u, [0.0], 0.0)
    assert upper[0] >= middle[0] >= lower[0]
    assert upper[0] - lower[0] > 0.0


def test_infsup_ellipticity_sandwich(rng, grid_1d):
    points = np.array([0.0, 0.375, -0.625])
    for _ in range(20):
        scales = rng.uniform(0.5, 2.0, size=(2, 3))
        family = [[KernelSpec(1, 1.0, ConstantCoefficient(s), 2.0) for s in row] for row in scales]
        I = OperatorSpec.infsup(family)
        u = _smooth_random_field(grid_1d, rng)
        v = _smooth_random_field(grid_1d, rng)
        report = ellipticity_audit(I, u, v, points, 0.0)
        assert report.passed, report.worst_violation
        assert report.nodes == 3


def test_infsup_needs_nonempty_family():
    with pytest.raises(ParameterError):
        OperatorSpec.infsup([])


def test_frozen_coefficients_match_constant_kernel(rng, grid_1d):
    u = _smooth_random_field(grid_1d, rng)
    x0 = 0.25
    I = OperatorSpec.linear(KernelSpec(1, 1.0, sine_x_coefficient(1.0, 0.5), 2.0))
    frozen = frozen_apply(I, u, (x0, 0.0), ([0.0, 0.5], 0.0))
    constant = KernelSpec(1, 1.0, ConstantCoefficient(1.0 + 0.5 * np.sin(x0)), 2.0)
    assert_allclose(frozen, linear_apply(constant, u, [0.0, 0.5], 0.0), rtol=1e-12, atol=1e-10)


def test_dimension_mismatch(grid_1d):
    u = Field(grid_1d, np.zeros(grid_1d.shape))
    with pytest.raises(ParameterError):
        apply_operator(OperatorSpec.pucci_plus(2, 1.0, 1.0), u, [0.0, 0.0], 0.0)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 1.5])
def test_sampled_constants_are_annihilated(sigma, grid_1d):
    u = Field.from_function(grid_1d, lambda p, t: np.ones(p.shape[0]))
    values = linear_apply(make_fractional_kernel(1, sigma), u, [0.0, 0.5], 0.0)
    assert_allclose(values, 0.0, atol=1e-12)


@pytest.mark.parametrize("sigma", [1.0, 1.5])
def test_affine_functions_are_annihilated(sigma, grid_1d):
    u = Field.from_function(grid_1d, lambda p, t: 0.5 + p[..., 0])
    values = linear_apply(make_fractional_kernel(1, sigma), u, [0.0, 0.5, -0.75], 0.0)
    assert_allclose(values, 0.0, atol=1e-9)


def test_affine_functions_are_annihilated_in_2d(grid_2d):
    u = Field.from_function(grid_2d, lambda p, t: 1.0 + p[..., 0] - 2.0 * p[..., 1])
    values = linear_apply(make_fractional_kernel(2, 1.5), u, [[0.0, 0.0], [0.5, -0.25]], 0.0)
    assert_allclose(values, 0.0, atol=1e-9)


def test_far_levels_follow_the_evaluation_point(grid_1d):
    u = Field.from_function(grid_1d, lambda p, t: p[..., 0])
    assert_allclose(u.far_levels([[0.0], [0.5], [-1.0]], 1.0, 0.0), [0.0, 0.5, -1.0], atol=1e-12)


def _root(coefficient: float):
    def rule(p, t):
        return coefficient * np.sqrt(np.abs(p[..., 0]))

    return rule


def test_operator_is_linear_in_fields_with_growing_tails(grid_1d):
    K = make_fractional_kernel(1, 1.0)
    points = np.array([0.0, 0.25, -0.5])
    u = Field.from_function(grid_1d, _root(1.0), [0.0], TailModel.even(0.5, 1.0))
    v = Field.from_function(grid_1d, _root(2.0), [0.0], TailModel.even(0.5, 2.0))
    Lu = linear_apply(K, u, points, 0.0)
    Lv = linear_apply(K, v, points, 0.0)
    assert_allclose(linear_apply(K, u + v, points, 0.0), Lu + Lv, rtol=1e-10, atol=1e-10)
    assert_allclose(linear_apply(K, u - v, points, 0.0), Lu - Lv, rtol=1e-10, atol=1e-10)
    assert_allclose(linear_apply(K, u.scaled(3.0), points, 0.0), 3.0 * Lu, rtol=1e-10, atol=1e-10)
    # v is 2u on the grid and in the tail
    assert_allclose(Lv, 2.0 * Lu, rtol=1e-10, atol=1e-10)


def test_linearity_mixes_explicit_and_declared_tails(grid_1d):
    K = make_fractional_kernel(1, 0.8)
    points = np.array([0.0, 0.5])
    u = Field.from_function(grid_1d, lambda p, t: np.cos(p[..., 0]))
    v = Field(grid_1d, np.ones(grid_1d.shape), tail=TailModel.constant(1.0))
    combined = linear_apply(K, u + v, points, 0.0)
    assert_allclose(combined, linear_apply(K, u, points, 0.0), atol=1e-10)


def test_translation_commutes_with_the_operator(grid_1d):
    K = make_fractional_kernel(1, 1.2)
    u = Field.from_function(grid_1d, lambda p, t: np.exp(-p[..., 0] ** 2) + 0.3 * p[..., 0])
    shift = 0.25
    points = np.array([0.0, -0.5])
    moved = linear_apply(K, u.translated([shift]), points, 0.0)
    assert_allclose(moved, linear_apply(K, u, points + shift, 0.0), atol=1e-10)


def test_tail_growing_like_the_kernel_order_diverges(grid_1d):
    u = Field(grid_1d, grid_1d.radii**1.2, tail=TailModel.even(1.2, 1.0))
    with pytest.raises(DivergenceError):
        linear_apply(make_fractional_kernel(1, 1.0), u, [0.0], 0.0)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 1.5])
def test_near_stencil_error_is_below_the_oracle_tolerance(sigma):
    grid = Grid(1, 1.0 / 64.0, 8.0)
    u = Field.from_function(grid, lambda p, t: np.exp(-p[..., 0] ** 2))
    stencil = stencil_for(grid, sigma)
    data = node_data_for(u, stencil, np.array([[0.0]]), 0.0)
    # 3-point second difference of exp(-x^2) at 0: -2 + h^2 u''''(0) / 12 with u''''(0) = 12
    assert abs(data.q[0] + 2.0) <= 1.1 * grid.h**2
    near_error = (2.0 - sigma) * stencil.near_mass * abs(data.q[0] + 2.0)
    oracle = spectral_reference(sigma, lambda p: np.exp(-p[..., 0] ** 2), np.array([0.0]))
    assert near_error <= 1e-3 * abs(oracle[0])
