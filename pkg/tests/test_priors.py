"""Prior construction, limits and superharmonicity verdicts."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predmetric.errors import RangeError, SpecError
from predmetric.geometry import ScalarField
from predmetric.models import NormalPairSpec, PoissonPairSpec, builtin_normal, builtin_poisson
from predmetric.priors import (CkappaParams, build_prior, cosh_rho, power_prior, prior_cauchy, prior_ckappa,
                               prior_right_invariant, prior_stein, prior_stein_poisson, probe_points,
                               random_bump_prior, superharmonic_check, volume_element_prior)

LS_POINTS = np.array([[0.0, 1.0], [1.5, 0.3], [-2.0, 4.0], [0.4, 2.2]])


class TestVolumeElement:
    def test_normal_uniform(self, normal_pair):
        p = volume_element_prior(normal_pair)
        vals = p.log_density(np.array([[0.0, 0.0], [3.0, -1.0], [10.0, 5.0]]))
        assert np.ptp(vals) < 1e-12

    def test_location_scale_sigma_minus_two(self, ls_pair):
        p = volume_element_prior(ls_pair)
        lp = p.log_density(LS_POINTS)
        np.testing.assert_allclose(lp - lp[0], -2 * np.log(LS_POINTS[:, 1]) + 2 * np.log(LS_POINTS[0, 1]),
                                   atol=1e-12)

    def test_poisson_jeffreys(self, poisson_pair):
        p = volume_element_prior(poisson_pair)
        lam = np.array([[1.0, 1.0, 1.0], [0.2, 3.0, 7.0]])
        lp = p.log_density(lam)
        expected = -0.5 * np.log(lam).sum(axis=1)
        assert lp[1] - lp[0] == pytest.approx(expected[1] - expected[0], abs=1e-12)


class TestCkappa:
    def test_ratio_is_inverse_cosh_plus_c(self, ls_pair):
        for c in (0.0, 0.5, 1.0):
            pr = prior_ckappa(ls_pair, CkappaParams(c, 1.3))
            for th in LS_POINTS:
                assert pr.ratio(th) == pytest.approx(1 / (cosh_rho(ls_pair, th[0], th[1], 1.3) + c), rel=1e-12)

    def test_cosh_rho_minimum_at_centre(self, ls_pair):
        from predmetric.geometry import fd_gradient
        g = fd_gradient(lambda th: cosh_rho(ls_pair, th[0], th[1], 2.0), [0.0, 2.0], order=4)
        np.testing.assert_allclose(g, 0.0, atol=1e-10)
        assert cosh_rho(ls_pair, 0.0, 2.0, 2.0) == pytest.approx(1.0)

    def test_large_kappa_limit_is_right_invariant(self, ls_pair):
        th = np.array([0.7, 1.9])
        right = prior_right_invariant(ls_pair).ratio(th)
        errs = [abs(k * prior_ckappa(ls_pair, CkappaParams(0.5, k)).ratio(th) / 2 - right) for k in (1e2, 1e4)]
        assert errs[1] < errs[0] and errs[1] < 1e-3 * right

    def test_small_kappa_limit_is_cauchy(self, ls_pair):
        th = np.array([0.7, 1.9])
        cauchy = prior_cauchy(ls_pair).ratio(th)
        k = 1e-7
        assert prior_ckappa(ls_pair, CkappaParams(0.5, k)).ratio(th) / (2 * k) == pytest.approx(cauchy, rel=1e-6)

    @pytest.mark.parametrize("c,kappa", [(-0.1, 1.0), (0.5, 0.0), (0.5, -2.0)])
    def test_range(self, c, kappa):
        with pytest.raises(RangeError):
            CkappaParams(c, kappa)


class TestStein:
    def test_d2_constant(self):
        pair = builtin_poisson(PoissonPairSpec((1.0, 3.0)))
        f = prior_stein_poisson(pair).ratio
        assert f([0.3, 2.0]) == pytest.approx(1.0) and f([5.0, 0.1]) == pytest.approx(1.0)

    def test_d4_value(self):
        pair = builtin_poisson(PoissonPairSpec((1.0, 1.0, 1.0, 1.0)))
        assert prior_stein_poisson(pair).ratio(np.ones(4)) == pytest.approx(0.25)

    def test_normal_d3_harmonic(self, rng):
        pair = builtin_normal(NormalPairSpec(np.diag([1.0, 2.0, 0.5]), np.diag([1.5, 1.0, 1.0])))
        r = superharmonic_check(prior_stein(pair).ratio, pair.predictive_metric, rng.normal(size=(10, 3)))
        assert r.verdict == "SUPERHARMONIC"

    def test_wrong_family(self, ls_pair):
        with pytest.raises(SpecError):
            prior_stein_poisson(ls_pair)


class TestSuperharmonic:
    def test_sigma_harmonic(self, ls_pair):
        r = superharmonic_check(prior_right_invariant(ls_pair).ratio, ls_pair.predictive_metric, LS_POINTS)
        assert r.verdict == "SUPERHARMONIC"
        assert np.max(np.abs(r.values)) < 1e-8

    def test_sigma_squared_violated(self, ls_pair):
        f = ScalarField(lambda th: th[1] ** 2, ls_pair.chart)
        r = superharmonic_check(f, ls_pair.predictive_metric, LS_POINTS)
        assert r.verdict == "VIOLATED"
        # Lap sigma^2 = 2 (b~/b^2) sigma^2 with b~/b^2 = 1/2
        np.testing.assert_allclose(r.values, LS_POINTS[:, 1] ** 2, rtol=1e-7)

    def test_sqrt_sigma_strict(self, ls_pair):
        f = power_prior(prior_right_invariant(ls_pair), 0.5).ratio
        r = superharmonic_check(f, ls_pair.predictive_metric, LS_POINTS)
        assert r.verdict == "STRICT_SOMEWHERE"
        np.testing.assert_allclose(r.values, -0.125 * np.sqrt(LS_POINTS[:, 1]), rtol=1e-7)

    @pytest.mark.parametrize("d", [3, 4, 6])
    def test_poisson_stein_harmonic(self, d, rng):
        pair = builtin_poisson(PoissonPairSpec(tuple(rng.uniform(0.2, 3.0, d))))
        lam = rng.uniform(0.1, 5.0, size=(10, d))
        r = superharmonic_check(prior_stein_poisson(pair).ratio, pair.predictive_metric, lam)
        assert r.verdict == "SUPERHARMONIC"

    def test_constant(self, ls_pair):
        r = superharmonic_check(volume_element_prior(ls_pair).ratio, ls_pair.predictive_metric, LS_POINTS)
        assert r.verdict == "SUPERHARMONIC" and np.all(r.values == 0.0)


class TestPowerPrior:
    def test_identity_power(self, ls_pair):
        p = prior_right_invariant(ls_pair)
        assert power_prior(p, 1.0) is p

    @pytest.mark.parametrize("c", [0.0, 1.5, -1.0])
    def test_range(self, ls_pair, c):
        with pytest.raises(RangeError):
            power_prior(prior_right_invariant(ls_pair), c)

    @settings(max_examples=25, deadline=None)
    @given(st.floats(0.05, 1.0), st.floats(-3, 3), st.floats(0.1, 5))
    def test_superharmonic_preserved(self, c, mu, sigma):
        from predmetric.models import builtin_location_scale
        pair = builtin_location_scale()
        f = power_prior(prior_ckappa(pair, CkappaParams(0.3, 1.0)), c).ratio
        r = superharmonic_check(f, pair.predictive_metric, [[mu, sigma]])
        assert r.verdict in ("SUPERHARMONIC", "STRICT_SOMEWHERE")


class TestBuildAndEquivalence:
    def test_build_by_name(self, ls_pair):
        p = build_prior(ls_pair, {"name": "ckappa", "c": 0.5, "kappa": 2.0})
        assert p.params == {"c": 0.5, "kappa": 2.0}
        q = build_prior(ls_pair, {"name": "power", "base": {"name": "right_invariant"}, "c": 0.5})
        assert q.ratio([0.0, 4.0]) == pytest.approx(2.0)

    def test_unknown(self, ls_pair):
        with pytest.raises(SpecError):
            build_prior(ls_pair, {"name": "flat-ish"})

    def test_rescaled_equivalent(self, ls_pair):
        p = prior_right_invariant(ls_pair)
        q = build_prior(ls_pair, {"name": "right_invariant"})
        assert p.equivalent(q, LS_POINTS)
        assert not p.equivalent(volume_element_prior(ls_pair), LS_POINTS)

    def test_random_bumps_positive(self, poisson_pair, rng):
        low, high = np.full(3, 0.3), np.full(3, 4.0)
        for _ in range(10):
            p = random_bump_prior(poisson_pair, rng, low, high)
            pts = probe_points(poisson_pair.chart, low, high, 16, seed=1)
            assert np.all(np.array([p.ratio(x) for x in pts]) > 0)

    def test_probe_points_in_box(self, ls_pair):
        pts = probe_points(ls_pair.chart, [-2.0, 0.5], [2.0, 3.0], 20, seed=3, points=[[0.0, 1.0]])
        assert pts.shape == (21, 2)
        assert np.all(pts[:, 1] >= 0.5) and np.all(pts[:, 1] <= 3.0)
