import numpy as np
import pytest
from numpy.testing import assert_allclose

from cicdml.errors import DegenerateArm, InsufficientData
from cicdml.nuisance import (
    compose_gamma,
    estimate_pi,
    fit_cond_cdf,
    fit_cond_quantile,
    fit_density,
    fit_nu,
    monotone_rearrange,
)


class TestCondCdf:
    def test_empirical_cdf_at_sample_point(self):
        cdf = fit_cond_cdf(np.array([1.0, 2.0, 3.0]))
        assert cdf(2.0) == pytest.approx(2.0 / 3.0)

    def test_empirical_cdf_below_min(self):
        cdf = fit_cond_cdf(np.array([1.0, 2.0, 3.0]))
        assert cdf(0.5) == 0.0

    def test_insufficient_data(self):
        with pytest.raises(InsufficientData):
            fit_cond_cdf(np.array([1.0]))

    def test_conditional_median_recovered(self):
        # Y | L = l is Normal(l, 1), so F(l | l) = 1/2.
        rng = np.random.default_rng(101)
        n = 10_000
        l = rng.standard_normal((n, 1))
        y = l[:, 0] + rng.standard_normal(n)
        cdf = fit_cond_cdf(y, l)
        for point in (-1.0, 0.0, 1.0):
            got = cdf(point, np.array([point]))
            assert abs(got - 0.5) < 0.05

    def test_monotone_in_y_for_fixed_l(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal(300)
        l = rng.standard_normal((300, 2))
        cdf = fit_cond_cdf(y, l)
        grid = np.linspace(y.min(), y.max(), 64)
        vals = cdf.evaluate_many(grid, np.broadcast_to([0.2, -0.4], (64, 2)))
        assert np.all(np.diff(vals) >= 0)
        assert vals.min() >= 0.0 and vals.max() <= 1.0

    def test_grid_representation_rearranged(self):
        y = np.array([3.0, 1.0, 2.0, 5.0])
        cdf = fit_cond_cdf(y)
        grid, vals = cdf.grid_representation()
        assert np.all(np.diff(vals) >= 0)
        assert np.array_equal(vals, monotone_rearrange(vals))


class TestCondQuantile:
    def test_empirical_quantile(self):
        q = fit_cond_quantile(np.array([10.0, 20.0, 30.0]))
        assert q(2.0 / 3.0) == 20.0

    def test_boundary_clamp(self):
        q = fit_cond_quantile(np.array([10.0, 20.0, 30.0]))
        assert q(1.0) == 30.0
        assert q(0.0) == 10.0

    def test_conditional_median_recovered(self):
        # Y | L = l is Normal(2 l, 1): the conditional median is 2 l.
        rng = np.random.default_rng(202)
        n = 10_000
        l = rng.standard_normal((n, 1))
        y = 2.0 * l[:, 0] + rng.standard_normal(n)
        q = fit_cond_quantile(y, l)
        for point in (-1.0, 0.0, 1.0):
            got = q(0.5, np.array([point]))
            assert abs(got - 2.0 * point) < 0.1

    def test_round_trip_on_small_sample(self):
        y = np.array([1.0, 2.0, 3.0])
        cdf = fit_cond_cdf(y)
        q = fit_cond_quantile(y)
        # Q(F(y)) maps each point within a flat step back to the step's
        # upper sample point.
        for probe, expected in [(1.0, 1.0), (1.5, 1.0), (2.0, 2.0), (2.9, 2.0), (3.0, 3.0)]:
            assert q(cdf(probe)) == expected


class TestGammaMap:
    def test_hand_composed_transport(self):
        cdf = fit_cond_cdf(np.array([1.0, 2.0, 3.0]))
        quant = fit_cond_quantile(np.array([10.0, 20.0, 30.0]))
        gamma = compose_gamma(cdf, quant)
        assert gamma(2.0) == 20.0

    def test_identity_transport(self):
        y = np.array([0.4, 1.3, 2.2, 5.0])
        gamma = compose_gamma(fit_cond_cdf(y), fit_cond_quantile(y))
        assert_allclose(gamma(y), y)

    def test_shift_transport(self):
        rng = np.random.default_rng(11)
        y0 = rng.standard_normal(500)
        gamma = compose_gamma(fit_cond_cdf(y0), fit_cond_quantile(y0 + 5.0))
        inner = np.sort(y0)[25:-25]
        assert_allclose(gamma(inner), inner + 5.0, atol=1e-12)

    def test_monotone_transform_equivariance(self):
        rng = np.random.default_rng(12)
        y0 = rng.standard_normal(200)
        y1 = rng.standard_normal(200) + 1.0
        gamma = compose_gamma(fit_cond_cdf(y0), fit_cond_quantile(y1))
        for T in (np.exp, lambda x: x ** 3 + x, lambda x: 2.5 * x - 1.0):
            gamma_t = compose_gamma(fit_cond_cdf(T(y0)), fit_cond_quantile(T(y1)))
            assert_allclose(gamma_t(T(y0)), T(gamma(y0)), rtol=0, atol=0)

    def test_monotone_in_y(self):
        rng = np.random.default_rng(13)
        y0 = rng.standard_normal(150)
        y1 = np.exp(rng.standard_normal(150))
        l = rng.standard_normal((150, 1))
        gamma = compose_gamma(fit_cond_cdf(y0, l), fit_cond_quantile(y1, l))
        grid = np.linspace(-2.5, 2.5, 80)
        vals = gamma.evaluate_many(grid, np.broadcast_to([0.3], (80, 1)))
        assert np.all(np.diff(vals) >= 0)

    def test_dimension_mismatch_rejected(self):
        cdf = fit_cond_cdf(np.array([1.0, 2.0]), np.array([[0.0], [1.0]]))
        quant = fit_cond_quantile(np.array([1.0, 2.0]))
        with pytest.raises(ValueError):
            compose_gamma(cdf, quant)


class TestNuFn:
    def test_independent_treatment_gives_unit_odds(self):
        rng = np.random.default_rng(303)
        n = 10_000
        x = rng.standard_normal(n)
        a = (rng.uniform(size=n) < 0.5).astype(int)
        nu = fit_nu(x, None, a)
        lo, hi = np.quantile(x, [0.15, 0.85])
        grid = np.linspace(lo, hi, 9)
        vals = nu(grid)
        assert np.all(np.abs(vals - 1.0) < 0.15)

    def test_clipping_arithmetic(self):
        # Treated cluster far from the lone control: the fitted propensity
        # saturates and is clipped, so the odds hit (1 - eps) / eps.
        x = np.concatenate([np.zeros(99), [10.0]])
        a = np.concatenate([np.ones(99, dtype=int), [0]])
        nu = fit_nu(x, None, a, bandwidth=0.5, eps_clip=0.01)
        assert nu(0.0) == pytest.approx(0.99 / 0.01)

    def test_logistic_odds_recovered(self):
        rng = np.random.default_rng(404)
        n = 10_000
        x = rng.standard_normal(n)
        a = (rng.uniform(size=n) < 1.0 / (1.0 + np.exp(-x))).astype(int)
        nu = fit_nu(x, None, a)
        grid = np.linspace(-1.0, 1.0, 9)
        vals = nu(grid)
        assert np.all(np.abs(vals / np.exp(grid) - 1.0) < 0.2)

    def test_values_respect_clip_bounds(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(200)
        a = (rng.uniform(size=200) < 0.2).astype(int)
        nu = fit_nu(x, None, a, eps_clip=0.05)
        vals = nu(np.linspace(-30, 30, 101))
        assert vals.min() >= 0.05 / 0.95 - 1e-12
        assert vals.max() <= 0.95 / 0.05 + 1e-12

    def test_degenerate_arm_rejected(self):
        with pytest.raises(DegenerateArm):
            fit_nu(np.arange(5.0), None, np.ones(5, dtype=int))

    def test_integral_matches_direct_quadrature(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal(400)
        a = (rng.uniform(size=400) < 1.0 / (1.0 + np.exp(-x))).astype(int)
        nu = fit_nu(x, None, a)
        lo = np.array([-1.0, 0.5, 1.2])
        hi = np.array([0.7, 0.5, -0.8])
        fast = nu.integral_many(lo, hi, None)
        from scipy.integrate import quad
        for j in range(3):
            direct = quad(lambda t: nu(t), lo[j], hi[j], limit=200)[0]
            assert fast[j] == pytest.approx(direct, abs=5e-5)


class TestEstimatePi:
    def test_half(self):
        assert estimate_pi(np.array([1, 0, 1, 0])) == 0.5

    def test_quarter(self):
        assert estimate_pi(np.array([1, 0, 0, 0])) == 0.25

    def test_degenerate(self):
        with pytest.raises(DegenerateArm):
            estimate_pi(np.ones(4, dtype=int))


class TestDensityFn:
    def test_standard_normal_mode(self):
        rng = np.random.default_rng(505)
        dens = fit_density(rng.standard_normal(10_000))
        assert dens(0.0) == pytest.approx(0.3989, abs=0.05)

    def test_uniform_density(self):
        rng = np.random.default_rng(506)
        dens = fit_density(rng.uniform(size=10_000))
        assert dens(0.5) == pytest.approx(1.0, abs=0.15)

    def test_floor_far_from_data(self):
        dens = fit_density(np.array([0.0, 0.1, 0.2]), f_min=1e-3)
        assert dens(1e6) == 1e-3

    def test_insufficient(self):
        with pytest.raises(InsufficientData):
            fit_density(np.array([1.0]))
