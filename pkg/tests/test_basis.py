import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from apcsmooth.basis import (
    KnotSet,
    crs_basis,
    cyclic_crs_basis,
    default_knot_count,
    default_knots,
    natural_cubic_fit,
)
from apcsmooth.errors import ConfigurationError


def quadrature_penalty(knots, cyclic=False):
    """Independent oracle: integrate products of second derivatives of the
    interpolating basis functions built by scipy."""
    knots = np.asarray(knots, dtype=float)
    q = knots.size - 1 if cyclic else knots.size
    d2 = []
    for i in range(q):
        e = np.zeros(knots.size)
        e[i] = 1.0
        if cyclic and i == 0:
            e[-1] = 1.0
        cs = CubicSpline(knots, e, bc_type="periodic" if cyclic else "natural")
        d2.append(cs.derivative(2))
    S = np.zeros((q, q))
    for i in range(q):
        for j in range(i, q):
            total = 0.0
            for a, b in zip(knots[:-1], knots[1:]):
                val, _ = quad(lambda x: d2[i](x) * d2[j](x), a, b)
                total += val
            S[i, j] = S[j, i] = total
    return S


class TestDefaultKnots:
    def test_quarter_rule_spans_unique_values(self):
        values = np.arange(0.5, 60.0, 1.0)
        ks = default_knots(values, 15)
        assert ks.knots.size == 15
        assert ks.knots[0] == 0.5
        assert ks.knots[-1] == 59.5

    def test_three_values(self):
        ks = default_knots(np.array([1.0, 2.0, 3.0]), 3)
        assert_allclose(ks.knots, [1.0, 2.0, 3.0])

    def test_dense_rule_count(self):
        ks = default_knots(np.arange(1.0, 21.0), 19)
        assert ks.knots.size == 19

    def test_too_few_unique_values(self):
        with pytest.raises(ConfigurationError):
            default_knots(np.array([1.0, 2.0, 2.0]), 3)
        with pytest.raises(ConfigurationError):
            default_knots(np.arange(4.0), 5)

    def test_default_count_rule(self):
        assert default_knot_count(60) == 15
        assert default_knot_count(20) == 5
        assert default_knot_count(79) == 20
        assert default_knot_count(4) == 3  # floored


class TestCrsBasis:
    def test_interpolation_at_knots(self):
        knots = np.array([0.0, 1.0, 2.5, 4.0, 7.0])
        block = crs_basis(knots, KnotSet(knots))
        assert_allclose(block.design, np.eye(5), atol=1e-12)

    def test_penalty_annihilates_affine(self):
        knots = np.linspace(0.0, 3.0, 4)
        block = crs_basis(knots, KnotSet(knots))
        assert_allclose(block.penalty @ np.ones(4), 0.0, atol=1e-12)
        assert_allclose(block.penalty @ knots, 0.0, atol=1e-12)

    @pytest.mark.parametrize("knots", [np.array([0.0, 1.0, 2.0]), np.array([0.0, 0.7, 2.1, 4.0])])
    def test_penalty_matches_quadrature(self, knots):
        block = crs_basis(knots, KnotSet(knots))
        oracle = quadrature_penalty(knots)
        assert_allclose(block.penalty, oracle, rtol=1e-8, atol=1e-10)

    def test_penalty_null_space_dimension_two(self):
        knots = np.linspace(0.0, 10.0, 8)
        block = crs_basis(knots, KnotSet(knots))
        eig = np.linalg.eigvalsh(block.penalty)
        assert np.sum(eig < 1e-10 * eig.max()) == 2
        assert eig.min() > -1e-10 * eig.max()

    def test_affine_reproduction_in_span(self):
        knots = np.linspace(0.0, 10.0, 6)
        x = np.linspace(-1.0, 11.0, 40)
        block = crs_basis(x, KnotSet(knots))
        # value-at-knots coefficients reproduce affine functions exactly,
        # including the linear extrapolation region
        assert_allclose(block.design @ np.ones(6), 1.0, atol=1e-10)
        assert_allclose(block.design @ knots, x, atol=1e-9)

    def test_roughness_quadratic_form_matches_exact(self, rng):
        knots = np.sort(rng.uniform(0.0, 10.0, 9))
        block = crs_basis(knots, KnotSet(knots))
        for _ in range(20):
            beta = rng.normal(size=9)
            f = natural_cubic_fit(KnotSet(knots), beta)
            qf = float(beta @ block.penalty @ beta)
            assert abs(qf - f.roughness()) <= 1e-7 * max(1.0, abs(qf))

    def test_matches_scipy_natural_interpolant_between_knots(self, rng):
        # oracle: column j of the design is the natural cubic interpolant
        # of the j-th knot unit vector, so for any coefficient vector the
        # evaluated spline must agree with scipy's natural interpolation
        knots = np.sort(rng.uniform(0.0, 10.0, 7))
        x = np.linspace(knots[0], knots[-1], 57)
        block = crs_basis(x, KnotSet(knots))
        for _ in range(5):
            values = rng.normal(size=7)
            cs = CubicSpline(knots, values, bc_type="natural")
            assert_allclose(block.design @ values, cs(x), atol=1e-10)

    def test_rejects_too_few_knots(self):
        with pytest.raises(ConfigurationError):
            KnotSet(np.array([0.0, 1.0]))

    def test_rejects_cyclic_knots(self):
        ks = KnotSet(np.linspace(0, 4, 5), kind="cyclic")
        with pytest.raises(ConfigurationError):
            crs_basis(np.array([1.0]), ks)


class TestCyclicCrsBasis:
    def test_periodicity_of_rows(self):
        ks = KnotSet(np.linspace(0.0, 5.0, 6), kind="cyclic")
        block = cyclic_crs_basis(np.array([0.0]), ks, 5.0)
        x = np.array([0.3, 1.7, 2.2, 4.9])
        assert_allclose(block.rows(x), block.rows(x + 5.0), atol=1e-12)
        assert_allclose(block.rows(x), block.rows(x - 10.0), atol=1e-12)

    def test_penalty_annihilates_constant(self):
        ks = KnotSet(np.linspace(0.0, 5.0, 6), kind="cyclic")
        block = cyclic_crs_basis(np.array([0.0]), ks, 5.0)
        assert_allclose(block.penalty @ np.ones(block.width), 0.0, atol=1e-12)
        eig = np.linalg.eigvalsh(block.penalty)
        assert np.sum(eig < 1e-10 * eig.max()) == 1

    def test_penalty_matches_quadrature(self):
        knots = np.linspace(0.0, 5.0, 5)
        block = cyclic_crs_basis(np.array([0.0]), KnotSet(knots, kind="cyclic"), 5.0)
        oracle = quadrature_penalty(knots, cyclic=True)
        assert_allclose(block.penalty, oracle, rtol=1e-8, atol=1e-10)

    def test_matches_scipy_periodic_interpolant(self, rng):
        knots = np.linspace(0.0, 5.0, 6)
        x = np.linspace(0.0, 5.0, 41)
        block = cyclic_crs_basis(x, KnotSet(knots, kind="cyclic"), 5.0)
        for _ in range(5):
            values = rng.normal(size=5)
            cs = CubicSpline(knots, np.append(values, values[0]), bc_type="periodic")
            assert_allclose(block.design @ values, cs(x), atol=1e-10)

    def test_rejects_bad_period(self):
        ks = KnotSet(np.linspace(0.0, 5.0, 6), kind="cyclic")
        with pytest.raises(ConfigurationError):
            cyclic_crs_basis(np.array([0.0]), ks, 4.0)

    def test_rejects_too_few_knots(self):
        ks = KnotSet(np.array([0.0, 2.5, 5.0]), kind="cyclic")
        with pytest.raises(ConfigurationError):
            cyclic_crs_basis(np.array([0.0]), ks, 5.0)


class TestNaturalCubicFit:
    def test_affine_has_zero_curvature(self):
        knots = np.array([0.0, 1.0, 2.0, 3.5])
        f = natural_cubic_fit(KnotSet(knots), 2.0 * knots - 1.0)
        x = np.linspace(-2.0, 5.0, 50)
        assert_allclose(f.second_derivative(x), 0.0, atol=1e-12)
        assert_allclose(f(x), 2.0 * x - 1.0, atol=1e-10)
        assert f.roughness() <= 1e-24

    def test_boundary_second_derivatives_exactly_zero(self, rng):
        knots = np.sort(rng.uniform(0.0, 10.0, 7))
        f = natural_cubic_fit(KnotSet(knots), rng.normal(size=7))
        assert f.d2_at_knots[0] == 0.0
        assert f.d2_at_knots[-1] == 0.0

    def test_sin_roughness_near_analytic(self):
        knots = np.linspace(0.0, 4.0 * np.pi, 40)
        f = natural_cubic_fit(KnotSet(knots), np.sin(knots))
        analytic = 2.0 * np.pi  # integral of cos^2-shaped squared curvature
        assert abs(f.roughness() - analytic) < 0.05 * analytic

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            natural_cubic_fit(KnotSet(np.arange(4.0)), np.zeros(3))

    def test_linear_extrapolation(self, rng):
        knots = np.linspace(0.0, 5.0, 6)
        f = natural_cubic_fit(KnotSet(knots), rng.normal(size=6))
        # beyond the boundary the function continues with constant slope
        left = f(np.array([-1.0, -2.0, -3.0]))
        assert_allclose(np.diff(left), left[0] - f(0.0), atol=1e-10)
        right = f(np.array([6.0, 7.0, 8.0]))
        assert_allclose(np.diff(right), right[0] - f(5.0), atol=1e-10)
