"""Invariant suite run by ``predmetric check``.

Each check returns a :class:`CheckResult` with the worst error seen and
the tolerance it was held to.  The suite adapts to the pair: isometry
checks for the builtin families, conventional-reduction checks when the
data and target models coincide, oracle checks where closed-form
predictive densities exist.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import PredMetricError
from .geometry import (check_spd, connection_trace, fd_gradient, laplace_beltrami, log_sqrt_det_gradient,
                       pushforward_metric, riemannian_connection)
from .models import Model, ModelPair, location_scale_params, poisson_xi_chart, upper_half_plane_chart
from .predictive import (location_scale_predictive_t, normal_predictive_uniform, poisson_predictive_P,
                         poisson_predictive_S, quadrature_predictive)
from .priors import (prior_cauchy, prior_ckappa, prior_right_invariant, prior_stein, probe_points,
                     random_bump_prior, volume_element_prior, CkappaParams)
from .risk_asym import (conventional_risk_diff, ckappa_risk_at, riskr_closed, risk_diff_thm1, risk_diff_thm2,
                        stein_poisson_risk_closed)


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_err: float
    tol: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {"check": self.name, "pass": self.passed, "max_err": self.max_err, "tol": self.tol,
                "detail": self.detail}


def default_box(pair: ModelPair):
    d = pair.dim
    if pair.family == "location_scale":
        return np.array([-2.0, 0.3]), np.array([2.0, 3.0])
    if pair.family == "poisson":
        return np.full(d, 0.3), np.full(d, 5.0)
    return np.full(d, -2.0), np.full(d, 2.0)


def _result(name, errors, tol, detail="") -> CheckResult:
    err = float(np.max(errors)) if len(errors) else 0.0
    return CheckResult(name, bool(np.isfinite(err) and err <= tol), err, tol, detail)


def _guarded(name: str, tol: float, fn: Callable[[], list]) -> CheckResult:
    try:
        return _result(name, fn(), tol)
    except PredMetricError as exc:
        return CheckResult(name, False, float("inf"), tol, f"{type(exc).__name__}: {exc}")


# ----------------------------------------------------------------------------
# Individual checks
# ----------------------------------------------------------------------------

def check_metrics_spd(pair: ModelPair, points) -> CheckResult:
    def run():
        errs = []
        for p in points:
            for G in (pair.g(p), pair.g_tilde(p), pair.g_pred(p)):
                check_spd(G)
                errs.append(np.max(np.abs(G - G.T)) / np.max(np.abs(G)))
        return errs
    return _guarded("metric_spd", 1e-12, run)


def check_t_symmetry(pair: ModelPair, points) -> CheckResult:
    def run():
        errs = []
        for model in (pair.x_model, pair.y_model):
            for p in points:
                T = model.t_tensor(p)
                scale = max(np.max(np.abs(T)), 1e-300)
                for perm in ((0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)):
                    errs.append(np.max(np.abs(T - np.transpose(T, perm))) / scale)
        return errs
    return _guarded("t_symmetry", 1e-8, run)


def duality_errors(model: Model, chart, points) -> list:
    """|d_i g_jk - Gamma^e_ijk - Gamma^m_ikj| relative to the metric-derivative scale."""
    errs = []
    for p in points:
        dG = fd_gradient(model.metric, p, order=4, chart=chart)          # [i, j, k] = d_i g_jk
        rhs = model.gamma_e(p) + np.einsum("ikj->ijk", model.gamma_m(p))
        scale = max(np.max(np.abs(dG)), np.max(np.abs(rhs)), np.max(np.abs(model.metric(p))))
        errs.append(np.max(np.abs(dG - rhs)) / scale)
    return errs


def check_duality(pair: ModelPair, points) -> CheckResult:
    return _guarded("duality", 1e-6, lambda: duality_errors(pair.x_model, pair.chart, points)
                    + duality_errors(pair.y_model, pair.chart, points))


def check_levi_civita(pair: ModelPair, points) -> CheckResult:
    def run():
        errs = []
        for model, field_ in ((pair.x_model, pair.metric_x), (pair.y_model, pair.metric_y)):
            for p in points:
                g0 = 0.5 * (model.gamma_e(p) + model.gamma_m(p))
                fd = riemannian_connection(field_, p)
                scale = max(np.max(np.abs(fd)), np.max(np.abs(model.metric(p))))
                errs.append(np.max(np.abs(g0 - fd)) / scale)
        return errs
    return _guarded("levi_civita", 1e-6, run)


def check_determinant_identities(pair: ModelPair, points) -> list[CheckResult]:
    fields = (pair.metric_x, pair.metric_y, pair.predictive_metric)

    def trace_identity():
        errs = []
        for m in fields:
            for p in points:
                a, b = log_sqrt_det_gradient(m, p), connection_trace(m, p)
                errs.append(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(a))))
        return errs

    def split_identity():
        errs = []
        for p in points:
            a = log_sqrt_det_gradient(pair.predictive_metric, p)
            b = 2.0 * log_sqrt_det_gradient(pair.metric_x, p) - log_sqrt_det_gradient(pair.metric_y, p)
            errs.append(np.max(np.abs(a - b)) / (1.0 + np.max(np.abs(a))))
        return errs

    return [_guarded("det_trace_identity", 1e-6, trace_identity),
            _guarded("det_split_identity", 1e-6, split_identity)]


def check_route_agreement(pair: ModelPair, points, n_priors: int, rng: np.random.Generator, low, high) -> CheckResult:
    def run():
        ref = volume_element_prior(pair)
        errs = []
        for _ in range(n_priors):
            prior = random_bump_prior(pair, rng, low, high)
            for p in points:
                a = risk_diff_thm1(pair, prior, ref, p)
                b = risk_diff_thm2(pair, prior, p)
                errs.append(abs(a - b) / (1.0 + abs(b)))
        return errs
    return _guarded("route_agreement", 1e-5, run)


def check_rescaling(pair: ModelPair, points) -> CheckResult:
    def run():
        prior = random_bump_prior(pair, np.random.default_rng(0), *default_box(pair))
        errs = []
        for p in points:
            base = laplace_beltrami(pair.predictive_metric, prior.ratio, p)
            for c in (0.5, 2.0, 10.0):
                scaled = laplace_beltrami(pair.predictive_metric.scaled(c), prior.ratio, p)
                errs.append(abs(scaled - base / c) / (1.0 + abs(base)))
        return errs
    return _guarded("metric_rescaling", 1e-8, run)


def check_closed_forms(pair: ModelPair, points) -> list[CheckResult]:
    out = []
    if pair.family == "location_scale":
        rr = riskr_closed(pair)
        out.append(_guarded("riskr_closed_form", 1e-8, lambda: [
            abs(risk_diff_thm2(pair, prior_right_invariant(pair), p) - rr) for p in points]))
        out.append(_guarded("cauchy_equals_riskr", 1e-6, lambda: [
            abs(risk_diff_thm2(pair, prior_cauchy(pair), p) - rr) for p in points]))

        def ck():
            errs = []
            for c in (0.0, 0.5, 1.0):
                for kappa in (0.5, 1.0, 2.0):
                    prior = prior_ckappa(pair, CkappaParams(c, kappa))
                    errs += [abs(risk_diff_thm2(pair, prior, p) - ckappa_risk_at(pair, c, kappa, p)) for p in points]
            return errs
        out.append(_guarded("ckappa_closed_form", 1e-6, ck))
    if pair.family == "poisson" and pair.dim >= 3:
        prior = prior_stein(pair)
        out.append(_guarded("stein_harmonic", 1e-7, lambda: [
            abs(laplace_beltrami(pair.predictive_metric, prior.ratio, p)) / max(1.0, prior.ratio(p)) for p in points]))
        out.append(_guarded("stein_risk_closed_form", 1e-6, lambda: [
            abs(risk_diff_thm2(pair, prior, p) - stein_poisson_risk_closed(pair, p)) for p in points]))
    if pair.family == "normal" and pair.dim >= 3:
        prior = prior_stein(pair)
        d = pair.dim

        def normal_stein():
            errs = []
            for p in points:
                r2 = p @ pair.g_pred(p) @ p
                errs.append(abs(risk_diff_thm2(pair, prior, p) + (d - 2) ** 2 / (2.0 * r2)))
            return errs
        out.append(_guarded("normal_stein_risk", 1e-6, normal_stein))
    return out


def check_isometry(pair: ModelPair, points) -> list[CheckResult]:
    if pair.family == "poisson":
        chart = poisson_xi_chart(pair.y_model.s)
        target = lambda xi: np.eye(pair.dim)  # noqa: E731
    elif pair.family == "location_scale":
        a, b, a_t, b_t = location_scale_params(pair)
        chart = upper_half_plane_chart(a, b, a_t, b_t)
        target = lambda uv: (b * b / b_t) / uv[1] ** 2 * np.eye(2)  # noqa: E731
    else:
        return []
    pushed = pushforward_metric(pair.predictive_metric, pair.chart, chart)

    def iso():
        errs = []
        for p in points:
            xi = chart.from_ref(p)
            T = target(xi)
            errs.append(np.max(np.abs(pushed(xi) - T)) / np.max(np.abs(T)))
        return errs

    def invariance():
        prior = random_bump_prior(pair, np.random.default_rng(1), *default_box(pair))
        errs = []
        for p in points:
            xi = chart.from_ref(p)
            a = risk_diff_thm2(pair, prior, p)
            b = risk_diff_thm2(pair, prior, xi, chart=chart)
            errs.append(abs(a - b) / (1.0 + abs(a)))
        return errs

    return [_guarded("isometry", 1e-10, iso), _guarded("chart_invariance", 1e-6, invariance)]


def check_conventional(pair: ModelPair, points, rng) -> list[CheckResult]:
    if not pair.same_models:
        return []

    def jeffreys_ratio():
        logs = [pair.log_volume_element(p) - 0.5 * np.linalg.slogdet(pair.g(p))[1] for p in points]
        ratios = np.exp(np.array(logs) - logs[0])
        return [np.std(ratios) / np.mean(ratios)]

    def reduction():
        prior = random_bump_prior(pair, rng, *default_box(pair))
        errs = []
        for p in points:
            a, b = conventional_risk_diff(pair, prior, p), risk_diff_thm2(pair, prior, p)
            errs.append(abs(a - b) / (1.0 + abs(b)))
        return errs

    return [_guarded("jeffreys_reduction", 1e-10, jeffreys_ratio),
            _guarded("conventional_risk", 1e-8, reduction)]


def check_oracles(pair: ModelPair, n_datasets: int, rng: np.random.Generator) -> list[CheckResult]:
    """Posterior quadrature against every closed-form predictive available for the pair."""
    low, high = default_box(pair)
    cases = []
    if pair.family == "normal" and pair.dim <= 3:
        prior = volume_element_prior(pair)

        def closed(data):
            return normal_predictive_uniform(pair, len(data), data.mean(axis=0))
        cases.append(("oracle_normal_uniform", prior, closed, 3))
    if pair.family == "poisson" and pair.dim <= 3:
        cases.append(("oracle_poisson_P", volume_element_prior(pair),
                      lambda data: poisson_predictive_P(pair, data.sum(axis=0), len(data)), 1))
        if pair.dim == 3:
            cases.append(("oracle_poisson_S", prior_stein(pair),
                          lambda data: poisson_predictive_S(pair, data.sum(axis=0), len(data)), 1))
    if (pair.family == "location_scale" and pair.x_model.base.name == "normal"
            and pair.y_model.base.name == "normal"):
        for prior in (prior_right_invariant(pair), volume_element_prior(pair)):
            cases.append((f"oracle_location_scale_{prior.name}", prior,
                          lambda data, pr=prior: location_scale_predictive_t(pair, pr, data), 20))
    out = []
    for name, prior, closed, n in cases:
        def run(prior=prior, closed=closed, n=n):
            errs = []
            for _ in range(n_datasets):
                theta = low + rng.uniform(size=pair.dim) * (high - low)
                data = pair.x_model.sample(theta, n, rng)
                y = pair.y_model.sample(theta, 3, rng)
                q = quadrature_predictive(pair, prior, data, y)
                c = closed(data).pdf(y)
                errs.append(np.max(np.abs(q - c) / c))
            return errs
        out.append(_guarded(name, 1e-6, run))
    return out


# ----------------------------------------------------------------------------
# Negative control
# ----------------------------------------------------------------------------

class _CorruptedModel(Model):
    """Wraps a model and rescales its metric by (1 + eps |theta|^2) only."""

    def __init__(self, base: Model, eps: float):
        self.base, self.eps = base, eps
        self.dim, self.obs_dim, self.chart = base.dim, base.obs_dim, base.chart
        self.mode = base.mode

    def __getattr__(self, name):
        # family parameters (cov, s, base) come from the wrapped model
        if name == "base":
            raise AttributeError(name)
        return getattr(self.base, name)

    def log_density(self, obs, theta):
        return self.base.log_density(obs, theta)

    def sample(self, theta, size, rng):
        return self.base.sample(theta, size, rng)

    def expectation_rule(self, theta, n=None):
        return self.base.expectation_rule(theta, n)

    def metric(self, theta):
        theta = np.asarray(theta, float)
        return (1.0 + self.eps * float(theta @ theta)) * self.base.metric(theta)

    def t_tensor(self, theta):
        return self.base.t_tensor(theta)

    def gamma_e(self, theta):
        return self.base.gamma_e(theta)

    def gamma_m(self, theta):
        return self.base.gamma_m(theta)


def corrupt_pair(pair: ModelPair, eps: float) -> ModelPair:
    """Copy of ``pair`` whose data-model metric no longer matches its connections."""
    xm = _CorruptedModel(pair.x_model, eps)
    ym = xm if pair.same_models else pair.y_model
    return ModelPair(xm, ym, pair.chart, pair.family, pair.label + " (corrupted)", pair.spec)


# ----------------------------------------------------------------------------
# Suite
# ----------------------------------------------------------------------------

def run_suite(pair: ModelPair, *, seed: int, n_points: int = 10, n_priors: int = 5, n_datasets: int = 5,
              points: Optional[np.ndarray] = None, low=None, high=None) -> list[CheckResult]:
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))
    dlow, dhigh = default_box(pair)
    low = dlow if low is None else np.asarray(low, float)
    high = dhigh if high is None else np.asarray(high, float)
    pts = probe_points(pair.chart, low, high, n_points, seed=seed % (2 ** 32), points=points)
    results = [check_metrics_spd(pair, pts), check_t_symmetry(pair, pts), check_duality(pair, pts),
               check_levi_civita(pair, pts)]
    results += check_determinant_identities(pair, pts)
    results.append(check_route_agreement(pair, pts, n_priors, rng, low, high))
    results.append(check_rescaling(pair, pts[:3]))
    results += check_closed_forms(pair, pts)
    results += check_isometry(pair, pts)
    results += check_conventional(pair, pts, rng)
    results += check_oracles(pair, n_datasets, rng)
    return results
