"""Predictive-metric priors and asymptotic Kullback-Leibler risk.

When the data x ~ p(x|theta) and the target y ~ p~(y|theta) follow
different models, the natural geometry for prior construction is the
predictive metric g g~^{-1} g built from the two Fisher metrics.  This
package builds the metrics and connections, priors expressed as ratios to
the predictive volume element, two independent formulas for the N^2-scaled
asymptotic risk difference between priors, exact predictive densities,
and a paired Monte Carlo harness that checks the asymptotics at finite N.
"""
from .errors import (ChartMismatch, ConfigError, DivergentIntegral, DomainError, IntegrationError, NonPositiveRatio,
                     NonSPDError, NumericalError, PredMetricError, RangeError, SpecError, StepError,
                     TruncationError, WindowError)
from .geometry import (Chart, MetricField, ScalarField, fd_gradient, fd_hessian, laplace_beltrami,
                       metric_inverse_and_det, pushforward_metric, riemannian_connection)
from .models import (LocationScalePairSpec, ModelPair, NormalPairSpec, PoissonPairSpec, builtin_location_scale,
                     builtin_normal, builtin_poisson, fisher_metric_numeric, t_tensor_and_connections)
from .predictive import (PredictiveDensity, normal_predictive_uniform, poisson_predictive_P, poisson_predictive_S,
                         predictive_density, quadrature_predictive)
from .priors import (CkappaParams, PriorSpec, power_prior, prior_cauchy, prior_ckappa, prior_right_invariant,
                     prior_stein_poisson, superharmonic_check, volume_element_prior)
from .risk_asym import (conventional_risk_diff, leading_risk_term, risk_diff_thm1, risk_diff_thm2, u_pi, w_pi)
from .simulate import RiskReport, SimPlan, asymptote_convergence, kl_divergence, mc_risk

__version__ = "0.1.0"

__all__ = [
    "Chart",
    "ChartMismatch",
    "CkappaParams",
    "ConfigError",
    "DivergentIntegral",
    "DomainError",
    "IntegrationError",
    "LocationScalePairSpec",
    "MetricField",
    "ModelPair",
    "NonPositiveRatio",
    "NonSPDError",
    "NormalPairSpec",
    "NumericalError",
    "PoissonPairSpec",
    "PredMetricError",
    "PredictiveDensity",
    "PriorSpec",
    "RangeError",
    "RiskReport",
    "ScalarField",
    "SimPlan",
    "SpecError",
    "StepError",
    "TruncationError",
    "WindowError",
    "asymptote_convergence",
    "builtin_location_scale",
    "builtin_normal",
    "builtin_poisson",
    "conventional_risk_diff",
    "fd_gradient",
    "fd_hessian",
    "fisher_metric_numeric",
    "kl_divergence",
    "laplace_beltrami",
    "leading_risk_term",
    "mc_risk",
    "metric_inverse_and_det",
    "normal_predictive_uniform",
    "poisson_predictive_P",
    "poisson_predictive_S",
    "power_prior",
    "predictive_density",
    "prior_cauchy",
    "prior_ckappa",
    "prior_right_invariant",
    "prior_stein_poisson",
    "pushforward_metric",
    "quadrature_predictive",
    "riemannian_connection",
    "risk_diff_thm1",
    "risk_diff_thm2",
    "superharmonic_check",
    "t_tensor_and_connections",
    "u_pi",
    "volume_element_prior",
    "w_pi",
]
