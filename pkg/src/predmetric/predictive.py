"""Bayesian predictive densities p~_pi(y | x^N).

Closed forms are provided for the normal pair with the uniform prior, the
Poisson pair with the volume-element and Stein-type priors, and the
Gaussian location-scale pair with priors sigma^{-k}.  Anything else goes
through :func:`posterior_grid`, a tensor-product Gauss-Legendre rule on a
window around the posterior mode (log coordinates on positive axes).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import optimize, special, stats

from .errors import DivergentIntegral, IntegrationError, SpecError, WindowError
from .geometry import fd_hessian
from .models import LOG_2PI, LocationScaleModel, ModelPair, PoissonModel, PoissonPairSpec, _as_obs
from .priors import PriorSpec

# posterior window: each side ends where the log posterior has dropped by
# WINDOW_DROP + 7 nats (8 Laplace standard deviations for a Gaussian shape)
WINDOW_START_SD = 2.0
# width (in Laplace standard deviations) of the linear core of the sinh map
SINH_CORE = 2.0
# the log posterior on the window faces must sit this far below its maximum
# (e^-25 ~ 1e-11 relative density)
WINDOW_DROP = 25.0
WINDOW_EXPANSIONS = 6
# outward step (in the sinh-map variable t) when a face is too high; t is capped
WINDOW_STEP = 0.25
WINDOW_T_MAX = 40.0
DEFAULT_NODES = 64
NODE_TOL = 1e-8
MAX_NODES = {1: 4096, 2: 512, 3: 128}
# rows x grid points evaluated at once when summing over the grid
CHUNK = 4_000_000


@dataclass(frozen=True, eq=False)
class PredictiveDensity:
    """A predictive density bound to one dataset.

    ``log_pdf`` maps targets of shape (M, obs_dim) to (M,) log-densities.
    ``gaussian`` holds (mean, cov) when the density is exactly normal.
    """

    log_pdf: Callable
    method: str
    obs_dim: int
    discrete: bool
    meta: dict = field(default_factory=dict)
    gaussian: Optional[tuple] = None

    def logpdf(self, y) -> np.ndarray:
        return np.asarray(self.log_pdf(_as_obs(y, self.obs_dim)), float)

    def pdf(self, y) -> np.ndarray:
        return np.exp(self.logpdf(y))

    __call__ = pdf


def _data_summary(pair_or_model, data):
    obs = _as_obs(data, pair_or_model.obs_dim)
    return obs, len(obs)


# ----------------------------------------------------------------------------
# Normal pair
# ----------------------------------------------------------------------------

def _gaussian_logpdf(mean, cov):
    mean = np.asarray(mean, float)
    chol = np.linalg.cholesky(cov)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    d = mean.size

    def f(y):
        z = np.linalg.solve(chol, (y - mean).T)
        return -0.5 * np.sum(z * z, axis=0) - 0.5 * (d * LOG_2PI + logdet)

    return f


def normal_predictive_uniform(pair: ModelPair, n: int, xbar) -> PredictiveDensity:
    """Uniform-prior predictive of the normal pair: N(xbar, cov_y + cov_x / N)."""
    if pair.family != "normal":
        raise SpecError("normal_predictive_uniform needs a normal pair")
    if n < 1:
        raise SpecError("N must be >= 1")
    xbar = np.atleast_1d(np.asarray(xbar, float))
    cov = pair.y_model.cov + pair.x_model.cov / n
    return PredictiveDensity(_gaussian_logpdf(xbar, cov), "closed-form", pair.dim, False,
                             {"N": n}, gaussian=(xbar, cov))


def normal_exact_risk(pair: ModelPair, n: int) -> float:
    """Exact KL risk of the uniform-prior predictive: (1/2) log det(I + cov_x cov_y^{-1} / N)."""
    m = np.eye(pair.dim) + np.linalg.solve(pair.y_model.cov.T, pair.x_model.cov.T).T / n
    return 0.5 * float(np.linalg.slogdet(m)[1])


# ----------------------------------------------------------------------------
# Poisson pair
# ----------------------------------------------------------------------------

def _exposures(obj) -> np.ndarray:
    if isinstance(obj, ModelPair):
        if obj.family != "poisson":
            raise SpecError("expected a Poisson pair")
        return obj.y_model.s / obj.x_model.s
    if isinstance(obj, PoissonPairSpec):
        return np.atleast_1d(np.asarray(obj.s, float))
    return np.atleast_1d(np.asarray(obj, float))


def _check_counts(x, d):
    x = np.atleast_1d(np.asarray(x, float))
    if x.shape != (d,) or np.any(x < 0) or np.any(x != np.round(x)):
        raise SpecError(f"counts must be {d} non-negative integers, got {x}")
    return x


def _poisson_common(s, x, y):
    # sum_i [y log s - gammaln(y+1) + gammaln(x+y+1/2) - gammaln(x+1/2)]
    return np.sum(y * np.log(s) - special.gammaln(y + 1.0) + special.gammaln(x + y + 0.5)
                  - special.gammaln(x + 0.5), axis=1)


def poisson_predictive_P(pair_or_s, x, n_obs: int = 1) -> PredictiveDensity:
    """Volume-element-prior predictive of the Poisson pair.

    ``x`` holds the count totals over ``n_obs`` i.i.d. observations; the
    target exposure is then ``s / n_obs``.  Evaluated in log space.
    """
    s = _exposures(pair_or_s) / n_obs
    x = _check_counts(x, s.size)

    def f(y):
        return _poisson_common(s, x, y) - np.sum((x + y + 0.5) * np.log1p(s), axis=1)

    return PredictiveDensity(f, "closed-form", s.size, True, {"s_eff": s.tolist(), "x": x.tolist()})


# rows per block in the u-integral; bounds the (rows, nodes) work array
U_CHUNK = 2048


def _log_u_integral(alpha: float, coeffs: np.ndarray, base: np.ndarray, s: np.ndarray,
                    step: float = 0.25) -> np.ndarray:
    """log of int_0^inf u^{alpha-1} prod_i (base_i + u/s_i)^{-c_mi} du for each row m.

    With u = e^w the integrand is analytic in the strip |Im w| < pi and
    decays exponentially on both sides, so the trapezoidal rule converges
    geometrically; the rules at ``step`` and ``step / 2`` must agree.
    """
    centre = float(np.log(np.median(s * base)))
    lo, hi = centre - 20.0, centre + 20.0

    def lw_of(w):
        return np.logaddexp(np.log(base)[:, None], w[None, :] - np.log(s)[:, None])   # (d, W)

    def grows(lo, hi):
        # does the integrand at either end sit within 40 nats of its peak?
        probe, ends = np.arange(lo, hi + 0.25, 0.5), np.array([lo, hi])
        lw_probe, lw_ends = lw_of(probe), lw_of(ends)
        grow = np.zeros(2, bool)
        for start in range(0, coeffs.shape[0], U_CHUNK):
            c = coeffs[start:start + U_CHUNK]
            peak = np.max(alpha * probe[None, :] - c @ lw_probe, axis=1)
            edge = alpha * ends[None, :] - c @ lw_ends
            grow |= np.any(edge > peak[:, None] - 40.0, axis=0)
        return grow

    for _ in range(20):
        grow_lo, grow_hi = grows(lo, hi)
        if not (grow_lo or grow_hi):
            break
        lo -= 20.0 * grow_lo
        hi += 20.0 * grow_hi
    else:
        raise IntegrationError("u-integral window did not close")

    # one evaluation at step/2; every other node gives the rule at step
    h = 0.5 * step
    n_half = int(math.ceil((hi - lo) / step))
    w = lo + h * np.arange(2 * n_half + 1)
    lw = lw_of(w)
    out = np.empty(coeffs.shape[0])
    for start in range(0, coeffs.shape[0], U_CHUNK):
        vals = alpha * w[None, :] - coeffs[start:start + U_CHUNK] @ lw
        top = vals.max(axis=1, keepdims=True)
        terms = np.exp(vals - top)
        fine = top[:, 0] + np.log(terms.sum(axis=1) * h)
        coarse = top[:, 0] + np.log(terms[:, ::2].sum(axis=1) * step)
        if np.max(np.abs(fine - coarse)) > 1e-12:
            raise IntegrationError("u-integral step refinement stalled")
        out[start:start + U_CHUNK] = fine
    return out


def poisson_predictive_S(pair_or_s, x, n_obs: int = 1) -> PredictiveDensity:
    """Stein-type-prior predictive of the Poisson pair.

    The prior ratio (sum lambda_i/s_i)^{-(d/2-1)} is written as a gamma
    mixture over u, leaving the ratio of two one-dimensional u-integrals
    times the gamma-function factor of the volume-element predictive.
    For d = 2 the ratio is constant and the volume-element predictive is
    returned; for d = 1 the mixture representation diverges.
    """
    s_raw = _exposures(pair_or_s)
    d = s_raw.size
    if d == 2:
        pred = poisson_predictive_P(s_raw, x, n_obs)
        return PredictiveDensity(pred.log_pdf, "closed-form", d, True, {**pred.meta, "reduced": "d=2"})
    if d < 2:
        raise DivergentIntegral("the u-integral representation needs d >= 3 (d/2 - 1 > 0)")
    s = s_raw / n_obs
    x = _check_counts(x, d)
    alpha = 0.5 * d - 1.0
    # the ratio is in lambda / s_raw; after rescaling by n_obs the mixing
    # variable multiplies lambda' / s_raw = lambda' / (n_obs s)
    scale = s_raw
    log_den = _log_u_integral(alpha, (x + 0.5)[None, :], np.ones(d), scale)[0]

    def f(y):
        y = np.asarray(y, float)
        log_num = _log_u_integral(alpha, x[None, :] + y + 0.5, 1.0 + s, scale)
        return _poisson_common(s, x, y) + log_num - log_den

    return PredictiveDensity(f, "closed-form", d, True, {"s_eff": s.tolist(), "x": x.tolist()})


def total_mass_discrete(pred: PredictiveDensity, upper) -> float:
    """Sum of a count-valued predictive over {0..upper_1} x ... x {0..upper_d}."""
    axes = [np.arange(int(u) + 1, dtype=float) for u in np.atleast_1d(upper)]
    grid = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    return float(np.exp(special.logsumexp(pred.logpdf(grid))))


# ----------------------------------------------------------------------------
# Gaussian location-scale with priors sigma^{-k}
# ----------------------------------------------------------------------------

def _sigma_power(prior: PriorSpec) -> Optional[int]:
    return {"volume": 2, "right_invariant": 1}.get(prior.name)


def location_scale_predictive_t(pair: ModelPair, prior: PriorSpec, data) -> PredictiveDensity:
    """Student-t predictive for normal data and target with prior sigma^{-k}.

    Degrees of freedom N + k - 2, centre xbar, squared scale
    S (1 + 1/N) / (N + k - 2) with S the residual sum of squares.
    """
    k = _sigma_power(prior)
    if (pair.family != "location_scale" or k is None or pair.x_model.base.name != "normal"
            or pair.y_model.base.name != "normal"):
        raise SpecError("Student-t predictive needs the Gaussian location-scale pair with pi_P or pi_R")
    x = _as_obs(data, 1)[:, 0]
    n = x.size
    dof = n + k - 2
    if dof <= 0:
        raise SpecError(f"posterior improper for N={n} with sigma^-{k}")
    xbar = x.mean()
    scale = math.sqrt(np.sum((x - xbar) ** 2) * (1.0 + 1.0 / n) / dof)
    dist = stats.t(dof, loc=xbar, scale=scale)
    return PredictiveDensity(lambda y: dist.logpdf(y[:, 0]), "closed-form", 1, False,
                             {"dof": dof, "loc": xbar, "scale": scale})


# ----------------------------------------------------------------------------
# Generic posterior quadrature
# ----------------------------------------------------------------------------

def _log_prior(prior: PriorSpec, thetas: np.ndarray) -> np.ndarray:
    try:
        ratio = np.asarray(prior.ratio(thetas), float)
        if ratio.shape != (len(thetas),):
            raise ValueError
    except (ValueError, TypeError, IndexError):
        ratio = np.array([prior.ratio(t) for t in thetas], float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log(ratio) + prior.pair.log_volume_element(thetas)


@dataclass(frozen=True, eq=False)
class PosteriorGrid:
    """Normalized posterior weights on a tensor Gauss-Legendre grid."""

    pair: ModelPair
    thetas: np.ndarray
    logw: np.ndarray
    n_nodes: int
    bounds: np.ndarray
    log_evidence: float
    mode: np.ndarray

    def predictive_logpdf(self, y) -> np.ndarray:
        y = _as_obs(y, self.pair.y_model.obs_dim)
        rows = max(1, CHUNK // max(1, len(self.thetas)))
        out = [special.logsumexp(self.pair.y_model.log_density(y[i:i + rows], self.thetas) + self.logw[None, :],
                                 axis=1) for i in range(0, len(y), rows)]
        return np.concatenate(out) if out else np.empty(0)

    def density(self) -> PredictiveDensity:
        return PredictiveDensity(self.predictive_logpdf, "quadrature", self.pair.y_model.obs_dim,
                                 isinstance(self.pair.y_model, PoissonModel),
                                 {"n_nodes": self.n_nodes, "bounds": self.bounds.tolist()})


class _Transformed:
    """Posterior in coordinates eta with eta_i = log(theta_i - lower_i) on bounded axes."""

    def __init__(self, pair: ModelPair, prior: PriorSpec, data):
        self.pair, self.prior = pair, prior
        self.chart = pair.chart
        self.pos = self.chart.positive_axes
        self.lower = np.where(self.pos, self.chart.lower, 0.0)
        self.loglik = pair.x_model.loglik(data)

    def theta(self, eta):
        eta = np.atleast_2d(eta)
        out = eta.copy()
        out[:, self.pos] = self.lower[self.pos] + np.exp(eta[:, self.pos])
        return out

    def eta(self, theta):
        theta = np.asarray(theta, float).copy()
        theta[self.pos] = np.log(theta[self.pos] - self.lower[self.pos])
        return theta

    def logpost(self, eta):
        eta = np.atleast_2d(eta)
        th = self.theta(eta)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            val = self.loglik(th) + _log_prior(self.prior, th) + np.sum(eta[:, self.pos], axis=1)
        return np.where(np.isfinite(val), val, -np.inf)


def _find_mode(tp: _Transformed, data):
    try:
        start = tp.pair.x_model.estimate(data)
    except NotImplementedError:
        start = np.where(tp.pos, tp.lower + 1.0, 0.0)
    start = np.where(tp.pos, np.maximum(start, tp.lower + 1e-8), start)
    eta0 = tp.eta(start)

    def nll(e):
        v = tp.logpost(e)[0]
        return -v if np.isfinite(v) else 1e300

    res = optimize.minimize(nll, eta0, method="BFGS", options={"gtol": 1e-9})
    mode = res.x
    if not np.isfinite(res.fun) or res.fun >= 1e300:
        raise WindowError("could not locate a posterior mode")
    hess = fd_hessian(lambda e: tp.logpost(e)[0], mode)
    try:
        cov = np.linalg.inv(-hess)
        sd = np.sqrt(np.diag(cov))
        if not np.all(np.isfinite(sd)) or np.any(sd <= 0):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sd = np.ones(mode.size)
    return mode, -res.fun, sd


def _gl_grid(bounds: np.ndarray, n: int, mode: np.ndarray, sd: np.ndarray):
    """Tensor Gauss-Legendre grid in t, mapped by eta = mode + sd c sinh(t/c).

    The sinh map turns exponentially decaying posterior tails (typical in
    log coordinates) into doubly exponential ones, so modest node counts
    reach high accuracy on wide windows.
    """
    z, w = np.polynomial.legendre.leggauss(n)
    nodes, logws = [], []
    for (lo, hi), m, sc in zip(bounds, mode, sd):
        half = 0.5 * (hi - lo)
        t = lo + half * (z + 1.0)
        nodes.append(m + sc * SINH_CORE * np.sinh(t / SINH_CORE))
        logws.append(np.log(w * half * sc * np.cosh(t / SINH_CORE)))
    pts = np.stack([g.ravel() for g in np.meshgrid(*nodes, indexing="ij")], axis=1)
    lw = np.sum(np.stack([g.ravel() for g in np.meshgrid(*logws, indexing="ij")], axis=1), axis=1)
    return pts, lw, nodes


def _face_max(tp: _Transformed, face_value: float, nodes, axis: int) -> float:
    axes = list(nodes)
    axes[axis] = np.array([face_value])
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    return float(np.max(tp.logpost(pts)))


def _initial_bounds(tp: _Transformed, mode, peak, sd) -> np.ndarray:
    d = mode.size
    bounds = np.empty((d, 2))
    for i in range(d):
        for side, sign in ((0, -1.0), (1, 1.0)):
            t = SINH_CORE * math.asinh(WINDOW_START_SD / SINH_CORE)
            while True:
                p = mode.copy()
                p[i] += sign * sd[i] * SINH_CORE * math.sinh(t / SINH_CORE)
                if tp.logpost(p)[0] < peak - WINDOW_DROP - 7.0:
                    break
                t += 0.125
                if t > WINDOW_T_MAX:
                    raise WindowError(f"posterior does not decay along axis {i}; N too small or prior too heavy")
            bounds[i, side] = sign * t
    return bounds


def posterior_grid(pair: ModelPair, prior: PriorSpec, data, *, n_nodes: int = DEFAULT_NODES, tol: float = NODE_TOL,
                   probe_y=None) -> PosteriorGrid:
    """Posterior quadrature grid for ``data`` under ``prior``.

    Each side of the window sits where the log posterior along that axis
    has dropped 32 nats below the mode (8 Laplace standard deviations for a
    Gaussian shape); sides are then widened until every face of the box
    lies 25 nats below the peak.
    Nodes per axis are doubled until the log evidence (and the predictive
    log-density at ``probe_y``, if given) change by less than ``tol``.
    """
    d = pair.dim
    if d > 3:
        raise SpecError("tensor-product posterior quadrature supports d <= 3")
    tp = _Transformed(pair, prior, data)
    mode, peak, sd = _find_mode(tp, data)
    bounds = _initial_bounds(tp, mode, peak, sd)

    def build(n):
        for _ in range(WINDOW_EXPANSIONS + 1):
            pts, lw, nodes = _gl_grid(bounds, n, mode, sd)
            lp = tp.logpost(pts)
            top = max(float(np.max(lp)), peak)
            widened = False
            for i in range(d):
                for side, sign in ((0, -1.0), (1, 1.0)):
                    # heavy (polynomial) marginal tails can need many steps
                    while True:
                        face = mode[i] + sd[i] * SINH_CORE * math.sinh(bounds[i, side] / SINH_CORE)
                        if _face_max(tp, face, nodes, i) <= top - WINDOW_DROP:
                            break
                        bounds[i, side] += sign * WINDOW_STEP
                        widened = True
                        if abs(bounds[i, side]) > WINDOW_T_MAX:
                            raise WindowError(f"posterior mass not captured along axis {i}; "
                                              "N too small or prior too heavy")
            if not widened:
                break
        else:
            raise WindowError("posterior mass not captured by the quadrature window")
        logw = lp + lw
        log_z = float(special.logsumexp(logw))
        thetas = tp.theta(pts)
        return PosteriorGrid(pair, thetas, logw - log_z, n, bounds.copy(), log_z, tp.theta(mode)[0])

    def summary(grid):
        vals = [grid.log_evidence]
        if probe_y is not None:
            vals.extend(grid.predictive_logpdf(probe_y))
        return np.array(vals)

    cap = MAX_NODES[d]
    grid = build(n_nodes)
    prev = summary(grid)
    while True:
        n = 2 * grid.n_nodes
        if n > cap:
            raise IntegrationError(f"posterior quadrature not converged at {grid.n_nodes} nodes per axis")
        nxt = build(n)
        cur = summary(nxt)
        if np.max(np.abs(cur - prev)) < tol:
            return nxt
        grid, prev = nxt, cur


def quadrature_predictive(pair: ModelPair, prior: PriorSpec, data, y, **kwargs) -> np.ndarray:
    """p~_pi(y | data) by posterior quadrature; ``y`` may hold several targets."""
    y = _as_obs(y, pair.y_model.obs_dim)
    grid = posterior_grid(pair, prior, data, probe_y=y, **kwargs)
    return np.exp(grid.predictive_logpdf(y))


def predictive_density(pair: ModelPair, prior: PriorSpec, data, method: str = "auto", probe_y=None,
                       **kwargs) -> PredictiveDensity:
    """Predictive density for ``data``: closed form when one exists, else quadrature."""
    if method not in ("auto", "closed-form", "quadrature"):
        raise SpecError(f"unknown predictive method {method!r}")
    if method != "quadrature":
        closed = _closed_form(pair, prior, data)
        if closed is not None:
            return closed
        if method == "closed-form":
            raise SpecError(f"no closed-form predictive for prior {prior.name!r} on {pair.family!r}")
    return posterior_grid(pair, prior, data, probe_y=probe_y, **kwargs).density()


def _closed_form(pair: ModelPair, prior: PriorSpec, data) -> Optional[PredictiveDensity]:
    if pair.family == "normal" and prior.name == "volume":
        obs, n = _data_summary(pair.x_model, data)
        return normal_predictive_uniform(pair, n, obs.mean(axis=0))
    if pair.family == "poisson" and prior.name in ("volume", "stein"):
        obs, n = _data_summary(pair.x_model, data)
        builder = poisson_predictive_P if prior.name == "volume" else poisson_predictive_S
        try:
            return builder(pair, obs.sum(axis=0), n)
        except DivergentIntegral:
            return None
    if (pair.family == "location_scale" and _sigma_power(prior) is not None
            and isinstance(pair.x_model, LocationScaleModel) and pair.x_model.base.name == "normal"
            and pair.y_model.base.name == "normal"):
        return location_scale_predictive_t(pair, prior, data)
    return None
