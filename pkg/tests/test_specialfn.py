"""Tests for spherical harmonics, Bessel functions, Gaunt coefficients and quadrature."""

import math

import numpy as np
import pytest
import scipy.special

from apwdg.core.errors import InvalidIndex, OutOfRange, QuadratureUnderResolved
from apwdg.specialfn import (
    RadialFamily,
    angular_grid,
    bessel_tail_degree,
    check_orthonormality,
    direction_angles,
    gauss_legendre,
    gaunt,
    gaunt_coupling_matrix,
    lm_index,
    lm_pairs,
    radial_basis_eval,
    sph_bessel,
    sph_bessel_table,
    sph_harm,
    validate_gaunt_table,
)

# =============================================================================
# Spherical harmonics
# =============================================================================


class TestSphericalHarmonics:
    def test_flat_index_order(self):
        assert [lm_index(l, m) for l, m in lm_pairs(2)] == list(range(9))
        assert lm_pairs(1) == [(0, 0), (1, -1), (1, 0), (1, 1)]

    def test_low_order_closed_forms(self):
        theta, phi = 0.7, 1.3
        assert sph_harm(0, 0, theta, phi) == pytest.approx(1.0 / math.sqrt(4.0 * math.pi))
        assert sph_harm(1, 0, theta, phi) == pytest.approx(
            math.sqrt(3.0 / (4.0 * math.pi)) * math.cos(theta)
        )

    def test_invalid_index(self):
        with pytest.raises(InvalidIndex, match="l=1, m=2"):
            sph_harm(1, 2, 0.1, 0.2)

    def test_grid_orthonormality(self):
        assert check_orthonormality(angular_grid(12), 12) < 1e-10

    def test_coarse_grid_fails_self_test(self):
        with pytest.raises(QuadratureUnderResolved):
            check_orthonormality(angular_grid(2), 6)

    def test_grid_weights_sum_to_sphere_area(self):
        grid = angular_grid(5)
        assert grid.size == 7 * 13
        assert grid.weights.sum() == pytest.approx(4.0 * math.pi)
        np.testing.assert_allclose(np.linalg.norm(grid.directions, axis=1), 1.0)

    def test_direction_angles_of_axes(self):
        radius, theta, phi = direction_angles(np.array([[0.0, 0.0, 2.0], [0.0, 3.0, 0.0]]))
        np.testing.assert_allclose(radius, [2.0, 3.0])
        np.testing.assert_allclose(theta, [0.0, math.pi / 2.0])
        assert phi[1] == pytest.approx(math.pi / 2.0)


# =============================================================================
# Spherical Bessel functions
# =============================================================================


class TestSphericalBessel:
    def test_matches_scipy_away_from_zero(self):
        x = np.linspace(0.1, 12.0, 40)
        for l in range(6):
            values, derivs = sph_bessel(l, x)
            np.testing.assert_allclose(values, scipy.special.spherical_jn(l, x), atol=1e-14)
            np.testing.assert_allclose(
                derivs, scipy.special.spherical_jn(l, x, derivative=True), atol=1e-14
            )

    def test_small_argument_leading_term(self):
        x = 5e-4
        values, derivs = sph_bessel(3, np.array([x]))
        assert values[0] == pytest.approx(x**3 / 105.0, rel=1e-6)
        assert derivs[0] == pytest.approx(3.0 * x**2 / 105.0, rel=1e-6)

    def test_value_at_zero(self):
        values, derivs = sph_bessel_table(3, np.array([0.0]))
        np.testing.assert_allclose(values[:, 0], [1.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(derivs[:, 0], [0.0, 1.0 / 3.0, 0.0, 0.0], atol=1e-15)

    def test_derivative_recurrence(self):
        x = 2.5
        j1, _ = sph_bessel(1, x)
        j2, dj2 = sph_bessel(2, x)
        assert float(dj2) == pytest.approx(float(j1) - 3.0 / x * float(j2), rel=1e-12)

    def test_negative_order(self):
        with pytest.raises(InvalidIndex):
            sph_bessel(-1, 1.0)


class TestBesselTail:
    def test_first_degree_below_tolerance(self):
        l = bessel_tail_degree(5.0, 1e-12)
        assert l > 5
        assert abs(scipy.special.spherical_jn(l, 5.0)) < 1e-12
        assert abs(scipy.special.spherical_jn(l - 1, 5.0)) >= 1e-12

    def test_smaller_arguments_are_covered(self):
        l = bessel_tail_degree(5.0, 1e-12)
        y = np.linspace(0.0, 5.0, 51)
        assert np.max(np.abs(scipy.special.spherical_jn(l, y))) < 1e-12

    def test_floor_and_zero_argument(self):
        assert bessel_tail_degree(1.0, 1e-12, floor=40) == 40
        assert bessel_tail_degree(0.0, 1e-12) == 1

    def test_grows_with_argument(self):
        assert bessel_tail_degree(10.0, 1e-12) > bessel_tail_degree(2.0, 1e-12)

    def test_rejects_nonpositive_tolerance(self):
        with pytest.raises(OutOfRange):
            bessel_tail_degree(1.0, 0.0)


# =============================================================================
# Gaunt coefficients
# =============================================================================


class TestGaunt:
    def test_monopole(self):
        assert gaunt(0, 0, 0, 0, 0, 0) == pytest.approx(1.0 / math.sqrt(4.0 * math.pi))

    def test_known_value(self):
        assert gaunt(2, 0, 1, 0, 1, 0) == pytest.approx(1.0 / math.sqrt(5.0 * math.pi))

    def test_selection_rules(self):
        # Odd l + l2 + l3
        assert gaunt(1, 0, 1, 0, 1, 0) == 0.0
        # m != m2 + m3
        assert gaunt(2, 1, 1, 0, 1, 0) == 0.0
        # Triangle inequality
        assert gaunt(4, 0, 1, 0, 1, 0) == 0.0

    def test_conjugation_symmetry(self):
        # Swapping the conjugated harmonic conjugates the integral, and Gaunt values are real
        assert gaunt(2, 1, 1, 1, 1, 0) == pytest.approx(gaunt(1, 1, 2, 1, 1, 0))

    def test_table_agrees_with_quadrature(self):
        assert validate_gaunt_table(2) < 1e-10

    def test_default_validation_covers_l6(self):
        # Every (l, m) triple up to l = 6 against a 22 x 43 product grid
        assert validate_gaunt_table() < 1e-10

    @pytest.mark.parametrize(("l", "l2", "l3"), [(6, 3, 3), (4, 6, 2), (6, 6, 0)])
    def test_high_order_entries_match_quadrature(self, l: int, l2: int, l3: int):
        grid = angular_grid(3 * 6 + 2)
        for m2 in range(-l2, l2 + 1):
            m3 = min(max(-m2, -l3), l3)
            m = m2 + m3
            if abs(m) > l:
                continue
            numeric = np.sum(
                np.conj(sph_harm(l, m, grid.theta, grid.phi))
                * sph_harm(l2, m2, grid.theta, grid.phi)
                * sph_harm(l3, m3, grid.theta, grid.phi)
                * grid.weights
            )
            assert abs(numeric - gaunt(l, m, l2, m2, l3, m3)) < 1e-10

    def test_coupling_matrix_shape_and_entry(self):
        coupling = gaunt_coupling_matrix(1, 2)
        assert coupling.shape == (16, 9)
        row = lm_index(1, 0) * 4 + lm_index(1, 0)
        assert coupling[row, lm_index(2, 0)] == pytest.approx(gaunt(1, 0, 1, 0, 2, 0))
        assert coupling[row, lm_index(0, 0)] == pytest.approx(1.0 / math.sqrt(4.0 * math.pi))


# =============================================================================
# Quadrature and radial families
# =============================================================================


def test_gauss_legendre_exactness():
    nodes, weights = gauss_legendre(5, 0.0, 2.0)
    assert np.sum(weights * nodes**9) == pytest.approx(2.0**10 / 10.0, rel=1e-13)


def test_gauss_legendre_rejects_empty_interval():
    with pytest.raises(OutOfRange):
        gauss_legendre(3, 1.0, 1.0)


class TestRadialFamily:
    def test_polynomial_values_at_endpoints(self):
        family = RadialFamily(kind="polynomial", max_degree=4, radius=2.0)
        values, _ = family.evaluate(np.array([0.0, 2.0]))
        np.testing.assert_allclose(values[:, 1], 1.0)
        np.testing.assert_allclose(values[:, 0], [1.0, -1.0, 1.0, -1.0, 1.0])

    def test_polynomial_derivative(self):
        family = RadialFamily(kind="polynomial", max_degree=2, radius=2.0)
        value, deriv = radial_basis_eval(family, 1, 0.5)
        # chi_1(r) = 2r/R - 1
        assert value == pytest.approx(-0.5)
        assert deriv == pytest.approx(1.0)

    def test_slater_family(self):
        family = RadialFamily(kind="slater", max_degree=2, radius=1.0, slater_eta=2.0)
        value, deriv = radial_basis_eval(family, 2, 0.5)
        assert value == pytest.approx(0.25 * math.exp(-1.0))
        assert deriv == pytest.approx((1.0 - 2.0 * 0.25) * math.exp(-1.0))
        assert family.constant_coefficients() is None

    def test_polynomial_constant_coefficients(self):
        family = RadialFamily(kind="polynomial", max_degree=3, radius=1.0)
        coefficients = family.constant_coefficients()
        values, _ = family.evaluate(np.linspace(0.0, 1.0, 7))
        np.testing.assert_allclose(coefficients @ values, 1.0)

    def test_out_of_range_argument(self):
        family = RadialFamily(kind="polynomial", max_degree=3, radius=1.0)
        with pytest.raises(OutOfRange):
            family.evaluate(np.array([1.5]))
        with pytest.raises(OutOfRange, match="n=4"):
            radial_basis_eval(family, 4, 0.5)
