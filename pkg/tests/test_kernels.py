"""
Tests for kernel classes, coefficient families and weights.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import quad, simpson

from app.lab.exceptions import DivergenceError, ParameterError, PreconditionError
from app.lab.fields import Field, Grid, TailModel
from app.lab.kernels import (
    ConstantCoefficient,
    FunctionCoefficient,
    KernelSpec,
    SamplePlan,
    WeightOmega,
    build_coefficient,
    check_L0_membership,
    check_L1_membership,
    cosine_y_coefficient,
    make_fractional_kernel,
    normalization_metadata,
    omega_l1_norm,
    shift_ratio_bound,
    shifted_norm_bound,
    sine_x_coefficient,
    sphere_area,
    validate_order,
)


def test_sphere_area():
    assert sphere_area(1) == pytest.approx(2.0)
    assert sphere_area(2) == pytest.approx(2.0 * np.pi)


@pytest.mark.parametrize(
    "sigma, Lambda, n",
    [(0.0, 1.0, 1), (2.0, 1.0, 1), (-0.5, 1.0, 1), (1.0, 0.5, 1), (1.0, 1.0, 3)],
)
def test_validate_order_rejects(sigma, Lambda, n):
    with pytest.raises(ParameterError):
        validate_order(sigma, Lambda, n)


def test_normalization_multiplier_half_laplacian():
    meta = normalization_metadata(1, 1.0)
    assert_allclose(meta["standard_constant"], 1.0 / np.pi, rtol=1e-12)
    assert_allclose(meta["multiplier"], 2.0 * np.pi, rtol=1e-12)
    assert meta["kernel_prefactor"] == 1.0


@pytest.mark.parametrize("n", [1, 2])
def test_constant_kernel_in_L0(n):
    report = check_L0_membership(make_fractional_kernel(n, 0.8), SamplePlan.lattice(n, count=6))
    assert report.passed
    assert report.worst_violation == 0.0
    assert report.normalization["kernel_prefactor"] == pytest.approx(1.2)


def test_coefficient_outside_ellipticity_bounds():
    K = KernelSpec(1, 1.0, ConstantCoefficient(3.0), 2.0)
    report = check_L0_membership(K, SamplePlan.lattice(1, count=6))
    assert not report.passed
    assert_allclose(report.worst_violation, 1.0)


def test_odd_coefficient_fails_evenness():
    odd = FunctionCoefficient(lambda x, t, y: 1.0 + 0.5 * np.sin(y[..., 0]), "odd", True, True)
    report = check_L0_membership(KernelSpec(1, 1.0, odd, 2.0), SamplePlan.lattice(1, count=6))
    assert not report.passed
    assert report.evenness_violation > 0.1


def test_cosine_family_is_even():
    report = check_L0_membership(KernelSpec(1, 1.0, cosine_y_coefficient(), 2.0), SamplePlan.lattice(1))
    assert report.passed
    assert report.evenness_violation == 0.0


def test_L1_needs_translation_invariance():
    with pytest.raises(PreconditionError):
        check_L1_membership(KernelSpec(1, 1.0, sine_x_coefficient(), 2.0), SamplePlan.lattice(1))


@pytest.mark.parametrize("slack, passed", [(1.5, True), (0.5, False)])
def test_L1_gradient_bound(slack, passed):
    # |DK(y)| |y|^(n+sigma+1) = (2 - sigma)(n + sigma) = 2 for the half Laplacian
    plan = SamplePlan.lattice(1, count=8, fd_slack=slack)
    report = check_L1_membership(make_fractional_kernel(1, 1.0), plan)
    assert_allclose(report.gradient_sup, 2.0, rtol=1e-6)
    assert report.kind == "L1"
    assert report.passed is passed


@pytest.mark.parametrize("exponent, R", [(0.5, 4.0), (1.5, 8.0)])
def test_omega_tail_integral_closed_form(exponent, R):
    omega = WeightOmega.for_lower_order(1, exponent)
    reference, _ = quad(lambda r: 2.0 / (1.0 + r ** (1.0 + exponent)), R, np.inf)
    assert_allclose(omega.tail_integral(R), reference, rtol=1e-8)


def test_rescaled_coefficients_compose_exactly(rng):
    base = sine_x_coefficient(1.0, 0.5)
    twice = base.rescaled(0.5, 1.0).rescaled(0.5, 1.0)
    once = base.rescaled(0.25, 1.0)
    x = rng.uniform(-2.0, 2.0, size=(20, 1))
    y = rng.uniform(-2.0, 2.0, size=(20, 1))
    t = rng.uniform(-1.0, 0.0, size=20)
    assert_array_equal(twice(x, t, y), once(x, t, y))


def test_constant_coefficient_is_scale_invariant():
    c = ConstantCoefficient(1.5)
    assert c.rescaled(0.25, 1.0) is c
    assert c.scaled(2.0).value == 3.0


def test_build_coefficient_unknown_family():
    with pytest.raises(ParameterError):
        build_coefficient("nope")


def test_fractional_kernel_scale_must_fit_Lambda():
    with pytest.raises(ParameterError):
        make_fractional_kernel(1, 1.0, scale=3.0, Lambda=2.0)


def _bump(p, t):
    return 1.0 / (1.0 + p[..., 0] ** 2)


def test_omega_norm_of_one_is_pi():
    grid = Grid(1, 1.0 / 16.0, 10.0)
    u = Field(grid, np.ones(grid.shape), tail=TailModel.constant(1.0))
    assert omega_l1_norm(u, 0.0, WeightOmega(1, 1.0)) == pytest.approx(np.pi, abs=1e-6)


def test_omega_norm_diverges_for_fast_growth(grid_1d):
    u = Field.from_function(grid_1d, lambda p, t: np.abs(p[..., 0]) ** 1.2)
    with pytest.raises(DivergenceError):
        omega_l1_norm(u, 0.0, WeightOmega(1, 0.5))


@pytest.mark.parametrize("c", [-3.0, 0.5, 2.0])
def test_omega_norm_is_homogeneous(c, grid_1d):
    omega = WeightOmega(1, 0.5)
    u = Field.from_function(grid_1d, _bump)
    assert omega_l1_norm(u.scaled(c), 0.0, omega) == pytest.approx(abs(c) * omega_l1_norm(u, 0.0, omega), rel=1e-8)


def test_shift_ratio_bound():
    omega = WeightOmega(1, 0.5)
    samples = np.linspace(-4.0, 4.0, 257)
    assert shift_ratio_bound(omega, 0.0, samples) == 1.0
    ratio = shift_ratio_bound(omega, 0.5, samples)
    assert ratio > 1.0
    assert ratio == pytest.approx(np.max(omega(samples[:, None] - 0.5) / omega(samples[:, None])))


def test_shifted_norm_is_translation_covariant(grid_1d):
    omega = WeightOmega(1, 0.5)
    u = Field.from_function(grid_1d, lambda p, t: np.exp(-p[..., 0] ** 2))
    report = shifted_norm_bound(u, 0.0, omega, 0.5)
    # ||u(0.5 + .)|| is the integral of |u(z)| omega(z - 0.5)
    z = grid_1d.axis
    direct = simpson(np.exp(-(z**2)) * omega(z[:, None] - 0.5), x=z)
    assert report["shifted_norm"] == pytest.approx(direct, rel=1e-7)
    assert report["norm"] == pytest.approx(omega_l1_norm(u, 0.0, omega))
    assert report["shifted_norm"] <= report["bound"]
    unshifted = shifted_norm_bound(u, 0.0, omega, 0.0)
    assert unshifted["shifted_norm"] == pytest.approx(unshifted["norm"], rel=1e-12)
    assert unshifted["ratio"] == 1.0
