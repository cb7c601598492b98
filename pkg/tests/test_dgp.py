import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import ks_2samp

from cicdml.dgp import (
    ConstantNu,
    StmConfig,
    TransformSpec,
    did_config,
    gen_did,
    gen_stm,
    named_config,
    qq_invariance_diagnostic,
    qq_transform,
    true_nuisances,
    true_pi,
)
from cicdml.errors import InvalidTransform


class TestTransformSpec:
    def test_identity_round_trip(self):
        t = TransformSpec("identity")
        x = np.linspace(-3, 3, 7)
        assert_allclose(t.invert(t.apply(x)), x)

    def test_exp_round_trip(self):
        t = TransformSpec("exp")
        x = np.linspace(-2, 2, 9)
        assert_allclose(t.invert(t.apply(x)), x, atol=1e-12)

    def test_power_is_increasing_on_reals(self):
        t = TransformSpec("power", c=2.0)
        x = np.linspace(-2, 2, 41)
        assert np.all(np.diff(t.apply(x)) > 0)
        assert_allclose(t.invert(t.apply(x)), x, atol=1e-12)

    def test_invalid_specs_rejected(self):
        with pytest.raises(InvalidTransform):
            TransformSpec("power", c=0.0)
        with pytest.raises(InvalidTransform):
            TransformSpec("affine", a=0.0)
        with pytest.raises(InvalidTransform):
            TransformSpec("spline")

    def test_dict_round_trip(self):
        t = TransformSpec("affine", a=2.0, b=-1.0)
        assert TransformSpec.from_dict(t.to_dict()) == t


class TestGammaTrue:
    def test_identity_transforms_shift(self):
        cfg = did_config(100, trend=1.5)
        gamma = gen_stm(cfg)[1].gamma_true
        y = np.linspace(-2, 2, 11)
        assert_allclose(gamma(y), y + 1.5)

    def test_exp_transform_composition(self):
        cfg = named_config("stm-exp", n=100)
        gamma = gen_stm(cfg)[1].gamma_true
        y = np.linspace(-1, 2, 7)
        assert_allclose(gamma(y), np.exp(y + 0.7 - 0.2))

    def test_additive_effect_truth(self):
        cfg = named_config("stm-exp", n=100, effect=2.0)
        assert gen_stm(cfg)[1].att_true == 2.0

    def test_strictly_increasing(self):
        for name in ("did", "stm-exp", "stm-power"):
            gamma = gen_stm(named_config(name, n=50))[1].gamma_true
            grid = np.linspace(0.05, 3.0, 60) if name == "stm-exp" \
                else np.linspace(-3.0, 3.0, 60)
            assert np.all(np.diff(gamma(grid)) > 0)

    def test_multiplicative_effect_truth_by_monte_carlo(self):
        cfg = StmConfig(n=200, effect=1.5, effect_kind="multiplicative",
                        k1_intercept=1.0, seed=3, mc_size=200_000)
        _, truth = gen_stm(cfg)
        # Treated untreated-outcome mean is 1 (independent assignment), so
        # the contrast is about 0.5.
        assert truth.att_true == pytest.approx(0.5, abs=0.02)


class TestGenDid:
    def test_null_truth(self):
        assert gen_did(100, c=0.0, delta=0.0)[1].att_true == 0.0

    def test_construction_moments(self):
        data, truth = gen_did(100_000, c=1.0, delta=2.0, seed=5)
        assert truth.att_true == 2.0
        ctrl = data.a == 0
        assert np.mean(data.y1[ctrl] - data.y0[ctrl]) == pytest.approx(1.0, abs=0.05)
        treated = data.a == 1
        did = np.mean(data.y1[treated] - data.y0[treated]) - np.mean(
            data.y1[ctrl] - data.y0[ctrl])
        assert did == pytest.approx(2.0, abs=0.05)

    def test_seeded_determinism(self):
        d1, _ = gen_did(500, seed=9)
        d2, _ = gen_did(500, seed=9)
        assert np.array_equal(d1.y0, d2.y0)
        assert np.array_equal(d1.y1, d2.y1)
        assert np.array_equal(d1.a, d2.a)
        d3, _ = gen_did(500, seed=10)
        assert not np.array_equal(d1.y0, d3.y0)

    def test_bad_pi_rejected(self):
        with pytest.raises(ValueError):
            did_config(100, pi=1.0)


class TestStmConfigValidation:
    def test_positivity_bound(self):
        with pytest.raises(ValueError):
            StmConfig(n=100, q=1, m_coeffs=(1.0,), treat_u=(5.0,))

    def test_coefficient_lengths(self):
        with pytest.raises(ValueError):
            StmConfig(n=100, p=2, q=1)

    def test_dict_round_trip(self):
        cfg = named_config("stm-power", n=321, seed=4)
        assert StmConfig.from_dict(cfg.to_dict()) == cfg


class TestTrueNuisances:
    def test_independence_constant_odds(self):
        cfg = did_config(100, pi=0.25)
        eta = true_nuisances(cfg)
        assert eta.pi == pytest.approx(0.25)
        assert eta.nu(0.0) == pytest.approx(0.25 / 0.75)

    def test_balanced_independence_unit_odds(self):
        eta = true_nuisances(did_config(100, pi=0.5))
        assert isinstance(eta.nu, ConstantNu)
        assert eta.nu(3.7) == pytest.approx(1.0)

    def test_true_pi_matches_sample_frequency(self):
        cfg = named_config("stm-exp", n=400_000, seed=21)
        data, _ = gen_stm(cfg)
        assert data.a.mean() == pytest.approx(true_pi(cfg), abs=0.005)

    def test_analytic_odds_match_sample_regression(self):
        # Binned empirical odds of the generated data against the
        # posterior-integral odds.
        cfg = named_config("stm-exp", n=400_000, seed=22)
        data, truth = gen_stm(cfg)
        eta = true_nuisances(cfg)
        x = truth.gamma_true(data.y0)
        edges = np.quantile(x, np.linspace(0.1, 0.9, 9))
        for lo, hi in zip(edges[:-1], edges[1:]):
            sel = (x >= lo) & (x < hi)
            emp = data.a[sel].mean()
            center = 0.5 * (lo + hi)
            model = eta.nu(center) / (1.0 + eta.nu(center))
            assert abs(emp - model) < 0.02

    def test_mc_oracle_self_consistency(self):
        cfg = named_config("stm-exp", n=100)
        nu1 = true_nuisances(cfg, method="mc", mc_size=4_000_000, seed=1).nu
        nu2 = true_nuisances(cfg, method="mc", mc_size=4_000_000, seed=2).nu
        grid = np.exp(np.linspace(-0.3, 1.7, 9))
        v1 = nu1(grid)
        v2 = nu2(grid)
        assert np.all(np.abs(v1 / v2 - 1.0) < 0.02)

    def test_mc_oracle_matches_analytic(self):
        cfg = named_config("stm-exp", n=100)
        nu_mc = true_nuisances(cfg, method="mc", mc_size=1_000_000, seed=3).nu
        nu_an = true_nuisances(cfg).nu
        grid = np.exp(np.linspace(-0.3, 1.7, 9))
        assert np.all(np.abs(nu_mc(grid) / nu_an(grid) - 1.0) < 0.03)


class TestQqInvariance:
    def test_shipped_configs_are_invariant(self):
        for name in ("did", "stm-exp", "stm-power", "stm-cov"):
            dev = qq_invariance_diagnostic(named_config(name, n=100))
            assert dev <= 1e-10, name

    def test_broken_config_detected(self):
        dev = qq_invariance_diagnostic(named_config("stm-broken", n=100))
        assert dev > 0.1

    def test_identity_transform_when_periods_match(self):
        cfg = StmConfig(n=100, k0_intercept=0.4, k1_intercept=0.4)
        y = np.linspace(-2, 2, 21)
        for u in (-1.0, 0.0, 2.0):
            assert_allclose(qq_transform(cfg, u, y), y, atol=1e-10)


class TestBridgeProperty:
    def test_transported_controls_match_period1_law(self):
        # The transported baseline outcomes of controls share the
        # distribution of their period-1 outcomes.
        for name in ("did", "stm-exp"):
            cfg = named_config(name, n=10_000, seed=13)
            data, truth = gen_stm(cfg)
            ctrl = data.a == 0
            transported = truth.gamma_true(data.y0[ctrl])
            stat = ks_2samp(transported, data.y1[ctrl]).statistic
            n1 = n2 = int(ctrl.sum())
            critical = 1.6276 * np.sqrt((n1 + n2) / (n1 * n2))
            assert stat <= critical, name

    def test_broken_config_fails_bridge(self):
        cfg = named_config("stm-broken", n=10_000, seed=13)
        data, truth = gen_stm(cfg)
        ctrl = data.a == 0
        transported = truth.gamma_true(data.y0[ctrl])
        stat = ks_2samp(transported, data.y1[ctrl]).statistic
        n1 = n2 = int(ctrl.sum())
        assert stat > 1.6276 * np.sqrt((n1 + n2) / (n1 * n2))
