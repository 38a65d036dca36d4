import math

import numpy as np
import pytest

from asymptolab.errors import BoundaryMassWarning, OrderTooHigh, ScaleOutOfRange
from asymptolab.field import Field, GridSpec, MultiIndex, lq_norm, moment
from asymptolab.heat import (
    HeatPropagator,
    expansion_error_bound,
    gauss_kernel,
    gaussian_values,
    heat_apply,
    hermite_coefficients,
    hermite_eval,
    hermite_gaussian,
    lambda_profile,
    propagator,
)


class TestGaussKernel:
    def test_peak_equals_one(self):
        g = GridSpec(1, 4.0, 1024)
        assert gauss_kernel(g, 1 / (4 * math.pi)).at_origin() == pytest.approx(1.0, abs=1e-14)

    def test_value_at_two(self, grid1):
        # (4 pi)^(-1/2) e^(-1), closed form evaluated independently
        k = gauss_kernel(grid1, 1.0)
        idx = int(np.argmin(np.abs(grid1.coords - 2.0)))
        assert k.values[idx] == pytest.approx(0.10377687435514868, abs=1e-15)

    @pytest.mark.parametrize("t", [0.5, 1.0, 5.0])
    def test_unit_mass(self, grid1, t):
        assert moment(0, gauss_kernel(grid1, t)) == pytest.approx(1.0, abs=1e-10)

    def test_unresolved(self, grid1):
        with pytest.raises(ScaleOutOfRange):
            gauss_kernel(grid1, 1e-4)

    def test_uncontained(self, grid1):
        with pytest.raises(ScaleOutOfRange):
            gauss_kernel(grid1, 40.0)


class TestPropagator:
    def test_identity_at_zero(self, grid1):
        assert np.all(propagator(grid1).multiplier(0.0) == 1.0)

    def test_multiplier_range_and_monotone(self, grid1):
        m = propagator(grid1).multiplier(0.7)
        assert np.all((m >= 0) & (m <= 1))
        # strictly positive wherever exp(-t k^2) is representable
        assert np.all(m[0.7 * grid1.ksq < 700] > 0)
        k = np.abs(grid1.wavenumbers)
        order = np.argsort(k, kind="stable")
        assert np.all(np.diff(m[order]) <= 0)

    def test_cache_bounded(self, grid1):
        prop = HeatPropagator(grid1, cache_size=4)
        for t in range(10):
            prop.multiplier(float(t))
        assert prop.cached_times == [6.0, 7.0, 8.0, 9.0]

    def test_semigroup_on_gaussian(self, grid1):
        out = heat_apply(1.5, 0, gauss_kernel(grid1, 1.0))
        np.testing.assert_allclose(out.values, gaussian_values(grid1, 2.5), atol=1e-9)

    def test_zero_time_identity(self, grid1):
        phi = gauss_kernel(grid1, 1.0)
        assert np.array_equal(heat_apply(0.0, 0, phi).values, phi.values)

    def test_mass_preserved_exactly(self, grid1):
        phi = grid1.sample(lambda x: np.exp(-((x - 1) ** 2)) * (2 + np.sin(x)))
        before = phi.values.sum()
        after = heat_apply(3.0, 0, phi).values.sum()
        assert after == pytest.approx(before, rel=1e-14)

    @pytest.mark.parametrize("order", [1, 2, 3])
    def test_derivatives_zero_mean(self, grid1, order):
        phi = gauss_kernel(grid1, 1.0)
        assert abs(heat_apply(1.0, order, phi).values.sum()) < 1e-12

    def test_order_four_rejected(self, grid1):
        with pytest.raises(OrderTooHigh):
            heat_apply(1.0, 4, gauss_kernel(grid1, 1.0))

    @pytest.mark.parametrize(
        "p, q, r", [(math.inf, 1, math.inf), (2, 1, 2), (2, 2, 1), (math.inf, 2, 2), (1, 1, 1), (4, 2, 4 / 3)]
    )
    @pytest.mark.parametrize("order", [0, 1, 2])
    def test_young_type_bound(self, grid1, p, q, r, order):
        phi = grid1.sample(lambda x: np.exp(-((x - 1) ** 2)) - 0.5 * np.exp(-((x + 2) ** 2) / 3))
        t = 2.0
        lhs = lq_norm(heat_apply(t, order, phi), p)
        kernel = (-2.0) ** -order * hermite_gaussian(grid1, order, 1.0)
        rhs = t ** (-0.5 * (1 / q - 1 / p) - order / 2) * lq_norm(kernel, r) * lq_norm(phi, q)
        assert lhs <= (1 + 1e-6) * rhs


class TestHermite:
    def test_h0_is_one(self):
        assert hermite_eval((0,), 3.7) == 1
        assert hermite_eval((0, 0), (1.0, -2.0)) == 1

    def test_h_unit_is_coordinate(self):
        assert hermite_eval((0, 1), (1.5, -2.5)) == -2.5

    def test_h2_at_zero(self):
        # beta = 1 term: (-1) 2!/(1! 0!) = -2
        assert hermite_eval((2,), 0.0) == -2

    def test_coefficients_integer_formula(self):
        for a in range(5):
            table = hermite_coefficients((a,))
            for b in range(a // 2 + 1):
                expected = (-1) ** b * math.factorial(a) // (math.factorial(b) * math.factorial(a - 2 * b))
                assert table[(a - 2 * b,)] == expected
                assert isinstance(table[(a - 2 * b,)], int)

    def test_physicists_polynomials(self):
        # h_a(x) = 2^(-a/2)... checked against the recurrence h_{a+1} = x h_a - 2a h_{a-1}
        x = np.linspace(-3, 3, 13)
        for a in range(1, 4):
            lhs = hermite_eval((a + 1,), x)
            rhs = x * hermite_eval((a,), x) - 2 * a * hermite_eval((a - 1,), x)
            np.testing.assert_allclose(lhs, rhs)

    def test_too_high(self):
        with pytest.raises(OrderTooHigh):
            hermite_eval((5,), 1.0)

    def test_tensor_product(self):
        assert hermite_eval((2, 1), (0.5, 2.0)) == pytest.approx(hermite_eval((2,), 0.5) * 2.0)

    @pytest.mark.parametrize("alpha", [(1,), (2,), (0, 1), (1, 1)])
    def test_kernel_derivative_identity(self, alpha):
        dim = len(alpha)
        grid = GridSpec(1, 16.0, 2048) if dim == 1 else GridSpec(2, 12.0, 256)
        t = 1.0
        lhs = heat_apply(t / 2, alpha, Field(grid, gaussian_values(grid, t / 2)))
        order = sum(alpha)
        rhs = (-2.0) ** -order * t ** (-order / 2) * hermite_gaussian(grid, alpha, t)
        assert lq_norm(lhs - rhs, math.inf) < 1e-8


class TestLambdaProfile:
    def test_zero_zero_is_mass_times_kernel(self, grid1):
        phi = grid1.sample(lambda x: 2 * np.exp(-((x - 1) ** 2)))
        out = lambda_profile(0, 0, 4.0, phi)
        np.testing.assert_allclose(out.values, moment(0, phi) * gaussian_values(grid1, 4.0), atol=1e-14)

    def test_unit_zero(self, grid1):
        phi = grid1.sample(lambda x: np.exp(-((x - 1) ** 2)))
        t = 4.0
        out = lambda_profile(1, 0, t, phi)
        expected = -0.5 * t**-0.5 * moment(0, phi) * hermite_gaussian(grid1, 1, t).values
        np.testing.assert_allclose(out.values, expected, atol=1e-14)

    def test_zero_mass_kills_derivative_profile(self, grid1):
        phi = grid1.sample(lambda x: x * np.exp(-x * x))
        assert lq_norm(lambda_profile(1, 0, 4.0, phi), math.inf) < 1e-16

    def test_first_moment_term(self, grid1):
        phi = grid1.sample(lambda x: np.exp(-((x - 1) ** 2)) / math.sqrt(math.pi))
        t = 4.0
        out = lambda_profile(0, 1, t, phi) - lambda_profile(0, 0, t, phi)
        expected = 0.5 * t**-0.5 * moment(1, phi) * hermite_gaussian(grid1, 1, t).values
        np.testing.assert_allclose(out.values, expected, atol=1e-14)

    def test_boundary_mass_is_error(self):
        g = GridSpec(1, 4.0, 256)
        phi = Field(g, gaussian_values(g, 4.0))
        with pytest.raises(BoundaryMassWarning):
            lambda_profile(0, 0, 1.0, phi)

    def test_order_limits(self, grid1):
        phi = gauss_kernel(grid1, 1.0)
        with pytest.raises(ValueError):
            lambda_profile(0, 3, 1.0, phi)
        with pytest.raises(OrderTooHigh):
            lambda_profile(3, 2, 1.0, phi)

    def test_vanishing_moments_converge(self):
        # phi with M_0 = M_1 = 0: t^((1/2)(1-1/q) + (|a|+m)/2) ||e^{t Lap} phi - Lambda|| -> 0
        grid = GridSpec(1, 128.0, 4096)
        x = grid.coords
        phi = Field(grid, (x**2 - 2) * np.exp(-x * x / 4) / math.sqrt(4 * math.pi))
        assert abs(moment(0, phi)) < 1e-12 and abs(moment(1, phi)) < 1e-12
        scaled = []
        for t in (4.0, 16.0, 64.0, 256.0):
            err = heat_apply(t, 0, phi) - lambda_profile(0, 1, t, phi)
            scaled.append(t**0.5 * lq_norm(err, 1))
        assert all(b < a for a, b in zip(scaled, scaled[1:]))

    def test_expansion_bound_holds(self, grid1):
        phi = grid1.sample(lambda x: np.exp(-((x - 1.5) ** 2) / 2) / math.sqrt(2 * math.pi))
        lhs, rhs = expansion_error_bound(0, 0, 4.0, 1.0, phi)
        assert 0 < lhs <= rhs


def test_orthogonality_small():
    grid = GridSpec(1, 16.0, 1024)
    g1 = gaussian_values(grid, 1.0)
    for a in range(3):
        for b in range(3):
            val = (hermite_eval((a,), grid.coords) * hermite_eval((b,), grid.coords) * g1).sum() * grid.spacing
            expected = 2**a * math.factorial(a) if a == b else 0.0
            assert val == pytest.approx(expected, abs=1e-10)


def test_multiindex_addition_hermite_gaussian(grid2):
    out = hermite_gaussian(grid2, MultiIndex((1, 0)) + MultiIndex((0, 1)), 2.0)
    x, y = grid2.mesh
    expected = (x / math.sqrt(2)) * (y / math.sqrt(2)) * gaussian_values(grid2, 2.0)
    np.testing.assert_allclose(out.values, expected, atol=1e-15)
