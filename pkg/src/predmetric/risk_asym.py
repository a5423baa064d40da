"""Asymptotic Kullback-Leibler risk differences, N^2-scaled.

Two independent routes are provided:

* :func:`risk_diff_thm1` works from the model tensors (Fisher metrics,
  e- and m-connections) and the prior's log-gradient through the vector
  field ``u_pi``;
* :func:`risk_diff_thm2` only needs the predictive metric ``g g~^{-1} g``
  and the prior ratio ``f = pi / pi_P``: ``2 Lap(f^{1/2}) / f^{1/2}``.

Agreement of the two is the main numerical check of the package.  All
values are the limits of ``N^2 (risk(pi) - risk(pi'))``; o(1) terms are
never estimated here.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NonPositiveRatio, NumericalError, SpecError
from .geometry import (INTERNAL_ORDER, Chart, MetricField, ScalarField, fd_gradient, laplace_beltrami,
                       pullback_scalar, pushforward_metric)
from .models import ModelPair, location_scale_params
from .priors import PriorSpec, cosh_rho

# Monte Carlo tensors below this many samples are too noisy to difference.
MC_SAMPLE_FLOOR = 100_000

# The two algebraic forms of the Laplacian route must agree this closely.
FORM_AGREEMENT_TOL = 1e-6


@dataclass(frozen=True)
class UPiVector:
    """The vector u^i (or w^i) at a point with its three parts.

    ``components = grad_part + s + coef * r`` with ``coef`` 1 for u and 1/2
    for w.  ``grad_part = g^{ik} d_k log f``; ``s = g^{ik}(d_k log pi_P -
    sum_j Gamma^e_kj^j)``; ``r = g^{kl}(Gamma~^m_kl^i - Gamma^m_kl^i)``.
    """

    components: np.ndarray
    grad_part: np.ndarray
    s: np.ndarray
    r: np.ndarray
    coef: float = 1.0


def _check_tensor_quality(pair: ModelPair, floor: int = MC_SAMPLE_FLOOR) -> None:
    for model in (pair.x_model, pair.y_model):
        if getattr(model, "mode", "analytic") == "monte-carlo":
            n = getattr(model, "mc_samples", None) or 0
            if n < floor:
                raise SpecError(f"Monte Carlo tensors with {n} samples are below the floor {floor}; "
                                "raise mc_samples or use quadrature")


def _raise(gamma: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    return np.einsum("ijl,kl->ijk", gamma, ginv)


def _geometry_at(pair: ModelPair, theta):
    """Inverse metrics and connection pieces at ``theta`` from the model tensors."""
    xm, ym = pair.x_model, pair.y_model
    g, gt = xm.metric(theta), ym.metric(theta)
    ginv, gtinv = np.linalg.inv(g), np.linalg.inv(gt)
    ge, gm = xm.gamma_e(theta), xm.gamma_m(theta)
    gm_t = ym.gamma_m(theta)
    ge_trace = np.einsum("kjl,jl->k", ge, ginv)
    # d_k log|g|^{1/2} = trace of the Levi-Civita connection = (Ge + Gm)/2 traced
    half_logdet_x = 0.5 * np.einsum("kjl,jl->k", ge + gm, ginv)
    half_logdet_y = 0.5 * np.einsum("kjl,jl->k", ym.gamma_e(theta) + gm_t, gtinv)
    grad_log_pip = 2.0 * half_logdet_x - half_logdet_y
    r = np.einsum("kl,kli->i", ginv, _raise(gm_t, gtinv) - _raise(gm, ginv))
    return g, gt, ginv, gtinv, ge_trace, grad_log_pip, r


def _log_ratio_gradient(prior: PriorSpec, theta) -> np.ndarray:
    f = prior.ratio(theta)
    if not f > 0:
        raise NonPositiveRatio(f"prior ratio {prior.name!r} is {f} at {theta}")
    return prior.ratio.gradient(theta) / f


def _u_vector(pair: ModelPair, prior: PriorSpec, theta, coef: float) -> UPiVector:
    theta = pair.chart.check(theta)
    _, _, ginv, _, ge_trace, grad_log_pip, r = _geometry_at(pair, theta)
    grad_part = ginv @ _log_ratio_gradient(prior, theta)
    s = ginv @ (grad_log_pip - ge_trace)
    return UPiVector(grad_part + s + coef * r, grad_part, s, r, coef)


def u_pi(pair: ModelPair, prior: PriorSpec, theta) -> UPiVector:
    """u^i = g^{ik}(d_k log pi - sum_j Gamma^e_kj^j) + g^{kl}(Gamma~^m_kl^i - Gamma^m_kl^i)."""
    _check_tensor_quality(pair)
    return _u_vector(pair, prior, theta, 1.0)


def w_pi(pair: ModelPair, prior: PriorSpec, theta) -> UPiVector:
    """The Bayes-optimal shift: u with half the m-connection gap, so u = w + r/2."""
    _check_tensor_quality(pair)
    w = _u_vector(pair, prior, theta, 0.5)
    u = w.grad_part + w.s + w.r
    if not np.allclose(u, w.components + 0.5 * w.r, rtol=1e-12, atol=1e-12 * (1 + np.max(np.abs(u)))):
        raise NumericalError("u = w + r/2 failed")
    return w


def _risk_term(pair: ModelPair, prior: PriorSpec, theta) -> float:
    """1/2 g~_ij u^i u^j + g~_ij g^{jk} (d_k u^i + Gamma~^e_kl^i u^l)."""
    g, gt, ginv, gtinv, *_ = _geometry_at(pair, theta)
    u = _u_vector(pair, prior, theta, 1.0).components
    du = fd_gradient(lambda th: _u_vector(pair, prior, th, 1.0).components, theta,
                     order=INTERNAL_ORDER, chart=pair.chart)          # du[k, i]
    ge_t = _raise(pair.y_model.gamma_e(theta), gtinv)                 # Gamma~^e_kl^i
    cov_deriv = du + np.einsum("kli,l->ki", ge_t, u)                  # [k, i]
    return float(0.5 * u @ gt @ u + np.einsum("ij,jk,ki->", gt, ginv, cov_deriv))


def risk_diff_thm1(pair: ModelPair, prior: PriorSpec, prior_ref: PriorSpec, theta) -> float:
    """N^2-scaled risk(prior) - risk(prior_ref) from the tensor formula."""
    _check_tensor_quality(pair)
    theta = pair.chart.check(theta)
    if prior is prior_ref:
        return 0.0
    return _risk_term(pair, prior, theta) - _risk_term(pair, prior_ref, theta)


def _sqrt_field(f: ScalarField) -> ScalarField:
    def grad(th):
        v = f(th)
        return f.gradient(th) / (2.0 * np.sqrt(v))

    def hess(th):
        v, gr = f(th), f.gradient(th)
        return f.hessian(th) / (2.0 * np.sqrt(v)) - np.outer(gr, gr) / (4.0 * v ** 1.5)

    return ScalarField(lambda th: np.sqrt(f(th)), f.chart, grad, hess)


def _laplacian_risk(m: MetricField, f: ScalarField, theta) -> float:
    fv = f(theta)
    if not fv > 0:
        raise NonPositiveRatio(f"prior ratio is {fv} at {theta}")
    root = _sqrt_field(f)
    form_root = 2.0 * laplace_beltrami(m, root, theta) / np.sqrt(fv)
    gr = f.gradient(theta)
    form_f = laplace_beltrami(m, f, theta) / fv - 0.5 * gr @ np.linalg.solve(m(theta), gr) / fv ** 2
    if abs(form_root - form_f) > FORM_AGREEMENT_TOL * (1.0 + abs(form_f)):
        raise NumericalError(f"Laplacian forms disagree at {theta}: {form_root} vs {form_f}")
    return float(form_root)


def risk_diff_thm2(pair: ModelPair, prior: PriorSpec, theta, chart: Optional[Chart] = None) -> float:
    """N^2-scaled risk(prior) - risk(pi_P) = 2 Lap(f^{1/2}) / f^{1/2} under the predictive metric.

    With ``chart`` given, ``theta`` is read in that chart and the metric and
    ratio are transported there before differentiating.
    """
    m, f = pair.predictive_metric, prior.ratio
    if chart is not None and chart is not pair.chart:
        m = pushforward_metric(m, pair.chart, chart)
        f = pullback_scalar(f, pair.chart, chart)
    return _laplacian_risk(m, f, np.asarray(theta, float))


def conventional_risk_diff(pair: ModelPair, prior: PriorSpec, theta) -> float:
    """Risk difference against the Jeffreys prior when data and target share a model.

    Uses the Fisher metric of the common model directly; the result is
    asserted equal to :func:`risk_diff_thm2` (the predictive metric then is
    the Fisher metric and pi_P is Jeffreys).
    """
    if not pair.same_models:
        raise SpecError("conventional_risk_diff needs identical data and target models")
    value = _laplacian_risk(pair.metric_x, prior.ratio, pair.chart.check(theta))
    check = risk_diff_thm2(pair, prior, theta)
    if abs(value - check) > 1e-8 * (1.0 + abs(value)):
        raise NumericalError(f"conventional reduction failed at {theta}: {value} vs {check}")
    return value


def leading_risk_term(pair: ModelPair, theta, n: int) -> float:
    """(1/2N) sum_ij g~_ij g^{ij}: the prior-free leading term of the KL risk."""
    if n < 1:
        raise SpecError("N must be >= 1")
    return float(np.trace(np.linalg.solve(pair.g(theta), pair.g_tilde(theta)))) / (2.0 * n)


# ----------------------------------------------------------------------------
# Closed forms of the builtin examples
# ----------------------------------------------------------------------------

def riskr_closed(pair: ModelPair) -> float:
    """Right-invariant prior versus pi_P: -b~ / (2 b^2)."""
    _, b, _, b_t = location_scale_params(pair)
    return -b_t / (2.0 * b * b)


def ckappa_risk_closed(b_ratio: float, c: float, cosh_r):
    """-(b~/b^2) [1/2 + c/(cosh rho + c) + (3/2)(1 - c^2)/(cosh rho + c)^2]."""
    q = np.asarray(cosh_r, float) + c
    return -b_ratio * (0.5 + c / q + 1.5 * (1.0 - c * c) / q ** 2)


def ckappa_risk_at(pair: ModelPair, c: float, kappa: float, theta) -> float:
    _, b, _, b_t = location_scale_params(pair)
    return float(ckappa_risk_closed(b_t / b ** 2, c, cosh_rho(pair, theta[0], theta[1], kappa)))


def stein_poisson_risk_closed(pair: ModelPair, lam) -> float:
    """-(1/2)(d/2 - 1)^2 / sum_i (lambda_i / s_i)."""
    s = pair.y_model.s
    d = s.size
    return -0.5 * (0.5 * d - 1.0) ** 2 / float(np.sum(np.asarray(lam, float) / s))


def closed_form_risk(pair: ModelPair, prior: PriorSpec, theta) -> float:
    """Known closed-form risk difference against pi_P, or NaN when none is known."""
    theta = np.asarray(theta, float)
    if prior.name == "volume":
        return 0.0
    if pair.family == "location_scale":
        if prior.name in ("right_invariant", "cauchy"):
            return riskr_closed(pair)
        if prior.name == "ckappa":
            return ckappa_risk_at(pair, prior.params["c"], prior.params["kappa"], theta)
    if prior.name == "stein":
        if pair.family == "poisson":
            return stein_poisson_risk_closed(pair, theta)
        if pair.family == "normal":
            d = pair.dim
            return -(d - 2) ** 2 / (2.0 * float(theta @ pair.g_pred(theta) @ theta))
    return float("nan")
