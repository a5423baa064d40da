"""Model tensors: analytic values against numeric oracles."""
import math

import numpy as np
import pytest
from scipy import integrate

from predmetric.checks import duality_errors
from predmetric.errors import SpecError
from predmetric.models import (LocationScalePairSpec, NormalModel, NumericTensors, PoissonModel, PoissonPairSpec,
                               base_density, builtin_location_scale, builtin_poisson, finite_predictive_metric,
                               fisher_metric_numeric, location_scale_constants, location_scale_params)


def _quad_constants(logpdf_grad, pdf):
    """(a, b) = (E[psi^2], E[(1 + z psi)^2]) by adaptive quadrature."""
    a = integrate.quad(lambda z: logpdf_grad(z) ** 2 * pdf(z), -np.inf, np.inf, epsabs=1e-13)[0]
    b = integrate.quad(lambda z: (1 + z * logpdf_grad(z)) ** 2 * pdf(z), -np.inf, np.inf, epsabs=1e-13)[0]
    return a, b


class TestLocationScaleConstants:
    def test_normal(self):
        c = location_scale_constants(base_density("normal"))
        a, b = _quad_constants(lambda z: -z, lambda z: math.exp(-z * z / 2) / math.sqrt(2 * math.pi))
        assert (c["a"], c["b"]) == pytest.approx((a, b), rel=1e-10)
        assert (c["a"], c["b"]) == pytest.approx((1.0, 2.0), rel=1e-12)
        assert c["g_offdiag"] == 0.0

    @pytest.mark.parametrize("df", [3.0, 7.5])
    def test_student_t(self, df):
        c = location_scale_constants(base_density({"name": "student_t", "df": df}))
        assert c["a"] == pytest.approx((df + 1) / (df + 3), rel=1e-8)
        assert c["b"] == pytest.approx(2 * df / (df + 3), rel=1e-8)

    def test_logistic(self):
        c = location_scale_constants(base_density("logistic"))
        assert c["a"] == pytest.approx(1 / 3, rel=1e-8)
        assert c["b"] == pytest.approx((math.pi ** 2 + 3) / 9, rel=1e-8)

    def test_unknown_base(self):
        with pytest.raises(SpecError):
            base_density("cauchy-ish")


class TestMetrics:
    def test_normal_unit(self):
        m = NormalModel(np.eye(1))
        assert m.metric([0.3])[0, 0] == 1.0

    def test_location_scale_gaussian(self, ls_pair):
        np.testing.assert_allclose(ls_pair.g([0.5, 2.0]), np.diag([1 / 4, 2 / 4]), rtol=1e-12)
        assert np.linalg.det(ls_pair.g([0.0, 2.0])) == pytest.approx(1 / 8, rel=1e-12)
        assert location_scale_params(ls_pair) == pytest.approx((1.0, 2.0, 1.0, 2.0))

    def test_poisson_target(self):
        assert PoissonModel([1.0]).metric([4.0])[0, 0] == 0.25

    def test_poisson_pair_example(self):
        pair = builtin_poisson(PoissonPairSpec((0.1, 0.2)))
        np.testing.assert_allclose(pair.g([1.0, 1.0]), np.eye(2))
        np.testing.assert_allclose(pair.g_tilde([1.0, 1.0]), np.diag([0.1, 0.2]))
        np.testing.assert_allclose(pair.g_pred([1.0, 1.0]), np.diag([10.0, 5.0]))

    def test_identical_models_share_metric(self):
        pair = builtin_location_scale(LocationScalePairSpec("normal", "normal"))
        assert pair.same_models

    @pytest.mark.parametrize("fixture,theta", [("ls_pair", [0.3, 1.7]), ("poisson_pair", [0.8, 2.0, 1.3]),
                                               ("normal_pair", [0.1, -0.4])])
    def test_numeric_matches_analytic(self, request, fixture, theta):
        pair = request.getfixturevalue(fixture)
        for model in (pair.x_model, pair.y_model):
            est = NumericTensors(model).estimate(theta)
            scale = np.max(np.abs(model.metric(theta)))
            np.testing.assert_allclose(est.metric, model.metric(theta), atol=1e-6 * scale)
            np.testing.assert_allclose(est.T, model.t_tensor(theta), atol=1e-5 * scale)
            np.testing.assert_allclose(est.gamma_e, model.gamma_e(theta), atol=1e-5 * scale)

    def test_monte_carlo_metric_within_se(self, ls_pair):
        g, se = fisher_metric_numeric(ls_pair.x_model, [0.0, 1.0], mode="monte-carlo", mc_samples=200_000)
        assert se is not None
        assert np.all(np.abs(g - ls_pair.g([0.0, 1.0])) <= 5 * se + 1e-12)


class TestDuality:
    @pytest.mark.parametrize("fixture", ["ls_pair", "poisson_pair", "normal_pair"])
    def test_duality(self, request, fixture):
        pair = request.getfixturevalue(fixture)
        pts = {"ls_pair": [[0.2, 0.7], [-1.0, 2.5]], "poisson_pair": [[0.3, 1.0, 4.0]],
               "normal_pair": [[0.0, 1.0]]}[fixture]
        for model in (pair.x_model, pair.y_model):
            assert max(duality_errors(model, pair.chart, np.array(pts))) < 1e-7

    def test_t_symmetric(self, ls_pair):
        T = ls_pair.x_model.t_tensor([0.1, 1.3])
        for perm in [(1, 0, 2), (0, 2, 1), (2, 1, 0)]:
            np.testing.assert_allclose(T, np.transpose(T, perm), atol=1e-14)


class TestFinitePredictiveMetric:
    def test_residual_is_order_n(self, rng):
        a = rng.normal(size=(3, 3))
        g = a @ a.T + np.eye(3)
        b = rng.normal(size=(3, 3))
        gt = b @ b.T + np.eye(3)
        limit = g @ np.linalg.solve(gt, g)
        ratios = []
        for n in (1e2, 1e3, 1e4):
            resid = finite_predictive_metric(g, gt, n) - n ** 2 * limit
            ratios.append(np.linalg.norm(resid) / n)
        assert max(ratios) / min(ratios) < 1.1
