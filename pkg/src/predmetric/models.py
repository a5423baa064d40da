"""Parametric model pairs sharing one parameter space.

A :class:`ModelPair` couples the data model ``p(x|theta)`` with the target
model ``p~(y|theta)``.  Each side is a :class:`Model` exposing a vectorized
log-density, a sampler, an expectation rule (quadrature nodes or a truncated
lattice) and the information-geometric tensors

    g_ij      = E[d_i l d_j l]
    T_ijk     = E[d_i l d_j l d_k l]
    Ge_ijk    = E[d_i d_j l d_k l]          (e-connection)
    Gm_ijk    = Ge_ijk + T_ijk              (m-connection)

Builtin families carry closed-form tensors; :class:`NumericTensors`
estimates them for arbitrary log-densities.
"""
from __future__ import annotations

import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize, special, stats

from .errors import IntegrationError, SpecError
from .geometry import INTERNAL_ORDER, Chart, MetricField, check_spd, fd_gradient, fd_hessian

LOG_2PI = math.log(2.0 * math.pi)

# Truncated Poisson lattices keep this much mass per coordinate.
POISSON_TAIL = 1e-13


# ----------------------------------------------------------------------------
# One-dimensional base densities for location-scale families
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BaseDensity:
    """Density phi on the real line, symmetric about 0.

    ``score`` is (log phi)' and ``dscore`` is (log phi)''.
    """

    name: str
    logpdf: Callable
    score: Callable
    dscore: Callable
    sampler: Callable
    params: dict = field(default_factory=dict)
    gauss_hermite: bool = False

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    def sample(self, rng, size):
        return self.sampler(rng, size)

    def nodes(self, n: int = 128):
        """Quadrature nodes z and weights w with sum(w h(z)) ~ E_phi[h]."""
        if self.gauss_hermite:
            z, w = np.polynomial.hermite_e.hermegauss(n)
            return z, w / math.sqrt(2.0 * math.pi)
        # z = tan(pi t / 2) pulls the infinite line onto (-1, 1)
        t, wt = np.polynomial.legendre.leggauss(n)
        z = np.tan(0.5 * np.pi * t)
        jac = 0.5 * np.pi / np.cos(0.5 * np.pi * t) ** 2
        return z, wt * jac * self.pdf(z)

    def to_dict(self) -> dict:
        return {"name": self.name, **self.params}


def standard_normal() -> BaseDensity:
    return BaseDensity(
        name="normal",
        logpdf=lambda z: -0.5 * np.square(z) - 0.5 * LOG_2PI,
        score=lambda z: -np.asarray(z, float),
        dscore=lambda z: -np.ones_like(np.asarray(z, float)),
        sampler=lambda rng, size: rng.standard_normal(size),
        gauss_hermite=True,
    )


def student_t(df: float) -> BaseDensity:
    if not df > 0:
        raise SpecError(f"student_t needs df > 0, got {df}")
    const = special.gammaln(0.5 * (df + 1)) - special.gammaln(0.5 * df) - 0.5 * math.log(df * math.pi)
    return BaseDensity(
        name="student_t",
        logpdf=lambda z: const - 0.5 * (df + 1) * np.log1p(np.square(z) / df),
        score=lambda z: -(df + 1) * np.asarray(z) / (df + np.square(z)),
        dscore=lambda z: -(df + 1) * (df - np.square(z)) / (df + np.square(z)) ** 2,
        sampler=lambda rng, size: rng.standard_t(df, size),
        params={"df": df},
    )


def logistic() -> BaseDensity:
    def logpdf(z):
        a = np.abs(z)
        return -a - 2.0 * np.log1p(np.exp(-a))

    return BaseDensity(
        name="logistic",
        logpdf=logpdf,
        score=lambda z: -np.tanh(0.5 * np.asarray(z, float)),
        dscore=lambda z: -2.0 * np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))) ** 2,
        sampler=lambda rng, size: rng.logistic(size=size),
    )


BASE_DENSITIES = {"normal": standard_normal, "student_t": student_t, "logistic": logistic}


def base_density(spec) -> BaseDensity:
    """Build a base density from ``"normal"`` or ``{"name": ..., **params}``."""
    if isinstance(spec, BaseDensity):
        return spec
    if isinstance(spec, str):
        spec = {"name": spec}
    spec = dict(spec)
    name = spec.pop("name", None)
    if name not in BASE_DENSITIES:
        raise SpecError(f"unknown base density {name!r}; choose from {sorted(BASE_DENSITIES)}")
    try:
        return BASE_DENSITIES[name](**spec)
    except TypeError as exc:
        raise SpecError(f"bad parameters for base density {name!r}: {exc}") from None


def _expect(base: BaseDensity, h: Callable) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(lambda z: h(z) * base.pdf(z), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-11, limit=400)
    if not np.isfinite(val) or err > 1e-9 * max(1.0, abs(val)):
        raise IntegrationError(f"quadrature for base density {base.name!r} did not converge (err={err:g})")
    return val


def location_scale_constants(base: BaseDensity) -> dict:
    """Fisher constants and tensor coefficients of ``phi((x-mu)/sigma)/sigma`` at sigma=1.

    Returns ``a``, ``b``, the off-diagonal metric entry (zero for symmetric
    phi), and 2x2x2 arrays ``T`` and ``Ge`` such that the tensors at sigma
    are ``T / sigma^3`` and ``Ge / sigma^3``.
    """
    psi, dpsi = base.score, base.dscore

    def score(z):
        return (-psi(z), -(1.0 + z * psi(z)))

    def hess(z):
        p, dp = psi(z), dpsi(z)
        h01 = p + z * dp
        return ((dp, h01), (h01, 1.0 + 2.0 * z * p + z * z * dp))

    G = np.empty((2, 2))
    T = np.empty((2, 2, 2))
    Ge = np.empty((2, 2, 2))
    for i in range(2):
        for j in range(2):
            G[i, j] = _expect(base, lambda z: score(z)[i] * score(z)[j])
            for k in range(2):
                T[i, j, k] = _expect(base, lambda z: score(z)[i] * score(z)[j] * score(z)[k])
                Ge[i, j, k] = _expect(base, lambda z: hess(z)[i][j] * score(z)[k])
    # odd integrands vanish for symmetric phi; drop the quadrature residue
    for arr in (G, T, Ge):
        arr[np.abs(arr) < 1e-12] = 0.0
    if not (G[0, 0] > 0 and G[1, 1] > 0):
        raise SpecError(f"base density {base.name!r} gives non-positive Fisher constants")
    return {"a": G[0, 0], "b": G[1, 1], "g_offdiag": G[0, 1], "T": T, "Ge": Ge}


# ----------------------------------------------------------------------------
# Single models
# ----------------------------------------------------------------------------

def _as_thetas(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return theta[None, :] if theta.ndim == 1 else theta


def _as_obs(obs, obs_dim) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if obs.ndim == 0:
        obs = obs.reshape(1, 1)
    elif obs.ndim == 1:
        obs = obs.reshape(-1, obs_dim) if obs_dim > 1 else obs[:, None]
    return obs


class Model(ABC):
    """One side of a model pair.

    ``log_density(obs, theta)`` takes observations of shape (M, obs_dim)
    and parameters of shape (K, d) (or (d,)) and returns an (M, K) array.
    """

    dim: int
    obs_dim: int
    chart: Chart
    mode = "analytic"

    @abstractmethod
    def log_density(self, obs, theta) -> np.ndarray: ...

    @abstractmethod
    def sample(self, theta, size: int, rng: np.random.Generator) -> np.ndarray: ...

    @abstractmethod
    def expectation_rule(self, theta, n: Optional[int] = None) -> tuple[np.ndarray, np.ndarray]:
        """Observations and weights approximating E[. | theta]."""

    @abstractmethod
    def metric(self, theta) -> np.ndarray: ...

    @abstractmethod
    def t_tensor(self, theta) -> np.ndarray: ...

    @abstractmethod
    def gamma_e(self, theta) -> np.ndarray: ...

    def gamma_m(self, theta) -> np.ndarray:
        return self.gamma_e(theta) + self.t_tensor(theta)

    def metric_batch(self, thetas) -> np.ndarray:
        thetas = _as_thetas(thetas)
        return np.stack([self.metric(t) for t in thetas])

    def estimate(self, data) -> np.ndarray:
        """A rough point estimate used to start posterior searches."""
        raise NotImplementedError

    def loglik(self, data) -> Callable:
        """Return ``thetas (K, d) -> (K,)`` log-likelihood of the i.i.d. sample ``data``."""
        obs = _as_obs(data, self.obs_dim)
        return lambda thetas: np.sum(self.log_density(obs, thetas), axis=0)

    def describe(self) -> dict:
        return {"type": type(self).__name__}


class NormalModel(Model):
    """N_d(mu, cov) with known covariance; theta = mu."""

    def __init__(self, cov, chart: Optional[Chart] = None):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        try:
            check_spd(cov)
        except Exception as exc:
            raise SpecError(f"covariance must be SPD: {exc}") from None
        self.cov = cov
        self.dim = self.obs_dim = cov.shape[0]
        self.precision = np.linalg.inv(cov)
        self.chol = np.linalg.cholesky(cov)
        self._logdet = np.linalg.slogdet(cov)[1]
        self.chart = chart or Chart("mean", self.dim)

    def log_density(self, obs, theta):
        obs = _as_obs(obs, self.obs_dim)
        thetas = _as_thetas(theta)
        diff = obs[:, None, :] - thetas[None, :, :]
        quad = np.einsum("mki,ij,mkj->mk", diff, self.precision, diff)
        return -0.5 * quad - 0.5 * (self.dim * LOG_2PI + self._logdet)

    def sample(self, theta, size, rng):
        z = rng.standard_normal((size, self.dim))
        return np.asarray(theta, float) + z @ self.chol.T

    def expectation_rule(self, theta, n=None):
        # score and Hessian are polynomial of degree <= 1 in x, so a few
        # Gauss-Hermite nodes per axis integrate every tensor exactly
        n = n or 12
        z, w = np.polynomial.hermite_e.hermegauss(n)
        w = w / math.sqrt(2.0 * math.pi)
        grids = np.meshgrid(*([z] * self.dim), indexing="ij")
        Z = np.stack([g.ravel() for g in grids], axis=1)
        W = np.prod(np.stack(np.meshgrid(*([w] * self.dim), indexing="ij")).reshape(self.dim, -1), axis=0)
        return np.asarray(theta, float) + Z @ self.chol.T, W

    def metric(self, theta):
        return self.precision.copy()

    def metric_batch(self, thetas):
        thetas = _as_thetas(thetas)
        return np.broadcast_to(self.precision, (len(thetas), self.dim, self.dim)).copy()

    def t_tensor(self, theta):
        return np.zeros((self.dim,) * 3)

    def gamma_e(self, theta):
        return np.zeros((self.dim,) * 3)

    def estimate(self, data):
        return np.mean(_as_obs(data, self.obs_dim), axis=0)

    def loglik(self, data):
        obs = _as_obs(data, self.obs_dim)
        n, xbar = len(obs), obs.mean(axis=0)
        resid = obs - xbar
        const = (-0.5 * np.einsum("mi,ij,mj->", resid, self.precision, resid)
                 - 0.5 * n * (self.dim * LOG_2PI + self._logdet))

        def f(thetas):
            diff = xbar - _as_thetas(thetas)
            return const - 0.5 * n * np.einsum("ki,ij,kj->k", diff, self.precision, diff)

        return f

    def describe(self):
        return {"type": "normal", "cov": self.cov.tolist()}


class LocationScaleModel(Model):
    """phi((x - mu)/sigma)/sigma; theta = (mu, sigma)."""

    def __init__(self, base: BaseDensity, chart: Optional[Chart] = None, constants: Optional[dict] = None):
        self.base = base
        self.dim, self.obs_dim = 2, 1
        self.chart = chart or location_scale_chart()
        self.constants = constants or location_scale_constants(base)
        self.a = self.constants["a"]
        self.b = self.constants["b"]

    def log_density(self, obs, theta):
        x = _as_obs(obs, 1)[:, 0]
        thetas = _as_thetas(theta)
        mu, sigma = thetas[:, 0], thetas[:, 1]
        z = (x[:, None] - mu[None, :]) / sigma[None, :]
        return self.base.logpdf(z) - np.log(sigma)[None, :]

    def sample(self, theta, size, rng):
        mu, sigma = theta
        return (mu + sigma * self.base.sample(rng, size))[:, None]

    def expectation_rule(self, theta, n=None):
        z, w = self.base.nodes(n or 128)
        mu, sigma = theta
        return (mu + sigma * z)[:, None], w

    def metric(self, theta):
        sigma = theta[1]
        g = self.constants["g_offdiag"]
        return np.array([[self.a, g], [g, self.b]]) / sigma ** 2

    def metric_batch(self, thetas):
        thetas = _as_thetas(thetas)
        g = self.constants["g_offdiag"]
        base = np.array([[self.a, g], [g, self.b]])
        return base[None] / thetas[:, 1, None, None] ** 2

    def t_tensor(self, theta):
        return self.constants["T"] / theta[1] ** 3

    def gamma_e(self, theta):
        return self.constants["Ge"] / theta[1] ** 3

    def estimate(self, data):
        x = _as_obs(data, 1)[:, 0]
        if self.base.name == "normal":
            return np.array([x.mean(), max(x.std(), 1e-12)])
        mad = np.median(np.abs(x - np.median(x))) * 1.4826
        start = np.array([np.median(x), math.log(max(mad, 1e-12))])

        def nll(p):
            return -np.sum(self.log_density(x[:, None], np.array([p[0], math.exp(p[1])])))

        res = optimize.minimize(nll, start, method="BFGS")
        return np.array([res.x[0], math.exp(res.x[1])])

    def loglik(self, data):
        if self.base.name != "normal":
            return super().loglik(data)
        x = _as_obs(data, 1)[:, 0]
        n, xbar = x.size, x.mean()
        ss = float(np.sum((x - xbar) ** 2))

        def f(thetas):
            thetas = _as_thetas(thetas)
            mu, sigma = thetas[:, 0], thetas[:, 1]
            return -n * np.log(sigma) - (ss + n * (xbar - mu) ** 2) / (2.0 * sigma ** 2) - 0.5 * n * LOG_2PI

        return f

    def describe(self):
        return {"type": "location_scale", "base": self.base.to_dict(), "a": self.a, "b": self.b}


class PoissonModel(Model):
    """Independent Po(s_i lambda_i), i = 1..d; theta = lambda."""

    def __init__(self, s, chart: Optional[Chart] = None):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if s.ndim != 1 or np.any(~(s > 0)) or not np.all(np.isfinite(s)):
            raise SpecError(f"Poisson exposures must be positive and finite, got {s}")
        self.s = s
        self.dim = self.obs_dim = s.size
        self.chart = chart or poisson_chart(self.dim)

    def log_density(self, obs, theta):
        obs = _as_obs(obs, self.obs_dim)
        thetas = _as_thetas(theta)
        rate = thetas * self.s[None, :]
        return (obs @ np.log(rate).T - np.sum(rate, axis=1)[None, :]
                - np.sum(special.gammaln(obs + 1.0), axis=1)[:, None])

    def sample(self, theta, size, rng):
        return rng.poisson(self.s * np.asarray(theta, float), size=(size, self.dim)).astype(float)

    def support(self, theta, tail: float = POISSON_TAIL):
        """Per-coordinate truncated supports and their dropped tail masses."""
        rate = self.s * np.asarray(theta, float)
        cut = stats.poisson.isf(tail, rate).astype(int) + 1
        axes = [np.arange(c + 1) for c in cut]
        dropped = stats.poisson.sf(cut, rate)
        return axes, dropped

    def expectation_rule(self, theta, n=None, tail: float = POISSON_TAIL):
        axes, _ = self.support(theta, tail)
        rate = self.s * np.asarray(theta, float)
        grids = np.meshgrid(*axes, indexing="ij")
        Y = np.stack([g.ravel() for g in grids], axis=1).astype(float)
        logw = np.sum(stats.poisson.logpmf(Y, rate[None, :]), axis=1)
        return Y, np.exp(logw)

    def metric(self, theta):
        return np.diag(self.s / np.asarray(theta, float))

    def metric_batch(self, thetas):
        thetas = _as_thetas(thetas)
        out = np.zeros((len(thetas), self.dim, self.dim))
        idx = np.arange(self.dim)
        out[:, idx, idx] = self.s[None, :] / thetas
        return out

    def _diag3(self, values):
        out = np.zeros((self.dim,) * 3)
        idx = np.arange(self.dim)
        out[idx, idx, idx] = values
        return out

    def t_tensor(self, theta):
        return self._diag3(self.s / np.asarray(theta, float) ** 2)

    def gamma_e(self, theta):
        return self._diag3(-self.s / np.asarray(theta, float) ** 2)

    def gamma_m(self, theta):
        return np.zeros((self.dim,) * 3)

    def estimate(self, data):
        obs = _as_obs(data, self.obs_dim)
        return (obs.mean(axis=0) + 0.5) / self.s

    def loglik(self, data):
        obs = _as_obs(data, self.obs_dim)
        n, total = len(obs), obs.sum(axis=0)
        const = float(total @ np.log(self.s) - np.sum(special.gammaln(obs + 1.0)))

        def f(thetas):
            thetas = _as_thetas(thetas)
            return const + np.log(thetas) @ total - n * thetas @ self.s

        return f

    def describe(self):
        return {"type": "poisson", "s": self.s.tolist()}


class CustomModel(Model):
    """User-supplied model; tensors come from :class:`NumericTensors`.

    ``log_density(obs, theta)`` must follow the (M, obs_dim) x (K, d) -> (M, K)
    convention.  ``expectation_rule(theta, n)`` may be omitted when only the
    Monte Carlo mode is used.
    """

    def __init__(self, dim, obs_dim, log_density, sampler, chart: Chart, expectation_rule=None,
                 tensor_mode: str = "quadrature", n_nodes: Optional[int] = None, mc_samples: int = 200_000,
                 seed: int = 0, estimate=None, supported_modes=("quadrature", "monte-carlo")):
        self.dim, self.obs_dim, self.chart = dim, obs_dim, chart
        self._log_density, self._sampler, self._rule = log_density, sampler, expectation_rule
        self._estimate = estimate
        if tensor_mode not in supported_modes:
            raise SpecError(f"model does not declare tensor mode {tensor_mode!r} (supports {supported_modes})")
        self.tensors = NumericTensors(self, tensor_mode, n_nodes=n_nodes, mc_samples=mc_samples, seed=seed)
        self.mode = tensor_mode

    def log_density(self, obs, theta):
        return self._log_density(_as_obs(obs, self.obs_dim), _as_thetas(theta))

    def sample(self, theta, size, rng):
        return np.asarray(self._sampler(theta, size, rng), float).reshape(size, self.obs_dim)

    def expectation_rule(self, theta, n=None):
        if self._rule is None:
            raise SpecError("this model has no quadrature rule; use the monte-carlo tensor mode")
        return self._rule(theta, n)

    def metric(self, theta):
        return self.tensors.metric(theta)

    def t_tensor(self, theta):
        return self.tensors.t_tensor(theta)

    def gamma_e(self, theta):
        return self.tensors.gamma_e(theta)

    def gamma_m(self, theta):
        return self.tensors.gamma_m(theta)

    @property
    def mc_samples(self):
        return self.tensors.mc_samples if self.mode == "monte-carlo" else None

    def estimate(self, data):
        if self._estimate is None:
            raise NotImplementedError("custom model has no estimate(); pass estimate=...")
        return np.asarray(self._estimate(data), float)


# ----------------------------------------------------------------------------
# Numeric tensor estimation
# ----------------------------------------------------------------------------

@dataclass
class TensorEstimate:
    metric: np.ndarray
    T: np.ndarray
    gamma_e: np.ndarray
    gamma_m: np.ndarray
    metric_se: Optional[np.ndarray] = None
    T_se: Optional[np.ndarray] = None
    gamma_e_se: Optional[np.ndarray] = None


def _scores(log_density, obs, theta, chart):
    def f(th):
        return log_density(obs, th[None, :])[:, 0]

    grad = fd_gradient(f, theta, order=INTERNAL_ORDER, chart=chart)  # (d, M)
    hess = fd_hessian(f, theta, order=INTERNAL_ORDER, chart=chart)   # (d, d, M)
    return grad, hess


def expected_tensors(log_density, obs, weights, theta, chart, *, monte_carlo: bool = False) -> TensorEstimate:
    """Weighted moments of the score at ``theta`` over the given observations."""
    theta = chart.check(theta)
    s, h = _scores(log_density, obs, theta, chart)
    w = np.asarray(weights, float)
    ss = np.einsum("im,jm->ijm", s, s)
    sss = np.einsum("ijm,km->ijkm", ss, s)
    hs = np.einsum("ijm,km->ijkm", h, s)
    G = ss @ w
    T = sss @ w
    Ge = hs @ w
    est = TensorEstimate(metric=0.5 * (G + G.T), T=T, gamma_e=Ge, gamma_m=Ge + T)
    if monte_carlo:
        m = len(w)
        est.metric_se = ss.std(axis=-1, ddof=1) / math.sqrt(m)
        est.T_se = sss.std(axis=-1, ddof=1) / math.sqrt(m)
        est.gamma_e_se = hs.std(axis=-1, ddof=1) / math.sqrt(m)
    return est


class NumericTensors:
    """Tensor provider that integrates score moments numerically.

    ``mode`` is ``"quadrature"`` (the model's expectation rule, checked
    against a half-resolution rule) or ``"monte-carlo"`` (``mc_samples``
    draws from a fixed seed, so the estimate is a smooth function of theta).
    """

    def __init__(self, model: Model, mode: str = "quadrature", *, n_nodes: Optional[int] = None,
                 mc_samples: int = 200_000, seed: int = 0, rtol: float = 1e-8):
        if mode not in ("quadrature", "series", "monte-carlo"):
            raise SpecError(f"unknown tensor mode {mode!r}")
        self.model, self.mode, self.n_nodes = model, mode, n_nodes
        self.mc_samples, self.seed, self.rtol = mc_samples, seed, rtol

    def estimate(self, theta) -> TensorEstimate:
        model = self.model
        if self.mode == "monte-carlo":
            rng = np.random.default_rng(self.seed)
            obs = model.sample(theta, self.mc_samples, rng)
            w = np.full(len(obs), 1.0 / len(obs))
            return expected_tensors(model.log_density, obs, w, theta, model.chart, monte_carlo=True)
        obs, w = model.expectation_rule(theta, self.n_nodes)
        est = expected_tensors(model.log_density, obs, w, theta, model.chart)
        if self.mode == "quadrature" and self.n_nodes is None and isinstance(model, LocationScaleModel):
            obs2, w2 = model.expectation_rule(theta, 64)
            coarse = expected_tensors(model.log_density, obs2, w2, theta, model.chart)
            scale = np.max(np.abs(est.metric))
            if np.max(np.abs(coarse.metric - est.metric)) > 1e-4 * scale:
                raise IntegrationError("quadrature for the Fisher metric has not converged")
        return est

    def metric(self, theta):
        return self.estimate(theta).metric

    def t_tensor(self, theta):
        return self.estimate(theta).T

    def gamma_e(self, theta):
        return self.estimate(theta).gamma_e

    def gamma_m(self, theta):
        return self.estimate(theta).gamma_m


def fisher_metric_numeric(model: Model, theta, mode: str = "quadrature", **kwargs):
    """Fisher metric ``E[d_i l d_j l]`` by quadrature/series or Monte Carlo.

    Returns ``(metric, standard_error)``; the error is ``None`` unless the
    Monte Carlo mode is used.
    """
    est = NumericTensors(model, mode, **kwargs).estimate(theta)
    return est.metric, est.metric_se


def t_tensor_and_connections(provider, theta):
    """``(T, Ge, Gm)`` from a model or tensor provider."""
    return provider.t_tensor(theta), provider.gamma_e(theta), provider.gamma_m(theta)


# ----------------------------------------------------------------------------
# Charts of the builtin families
# ----------------------------------------------------------------------------

def location_scale_chart() -> Chart:
    return Chart("mu-sigma", 2, lower=[-np.inf, 0.0], scale=[1.0, 0.0])


def upper_half_plane_chart(a: float, b: float, a_t: float, b_t: float) -> Chart:
    """(u, v) = (sqrt(b~/a~) (a/b) mu, sigma): the predictive metric becomes (b^2/b~) I / v^2."""
    k = math.sqrt(b_t / a_t) * a / b
    return Chart(
        "upper-half-plane", 2, lower=[-np.inf, 0.0], scale=[1.0, 0.0],
        to_reference=lambda uv: np.array([uv[0] / k, uv[1]]),
        from_reference=lambda ms: np.array([k * ms[0], ms[1]]),
        jacobian=lambda uv: np.diag([1.0 / k, 1.0]),
    )


def poisson_chart(d: int) -> Chart:
    return Chart("lambda", d, lower=np.zeros(d), scale=np.zeros(d))


def poisson_xi_chart(s) -> Chart:
    """xi_i = 2 sqrt(lambda_i / s_i): the predictive metric becomes the identity."""
    s = np.asarray(s, float)
    return Chart(
        "xi", s.size, lower=np.zeros(s.size), scale=np.zeros(s.size),
        to_reference=lambda xi: s * np.square(xi) / 4.0,
        from_reference=lambda lam: 2.0 * np.sqrt(np.asarray(lam) / s),
        jacobian=lambda xi: np.diag(s * np.asarray(xi) / 2.0),
    )


# ----------------------------------------------------------------------------
# Pairs
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class NormalPairSpec:
    cov_x: np.ndarray
    cov_y: np.ndarray


@dataclass(frozen=True)
class LocationScalePairSpec:
    base_x: object = "normal"
    base_y: object = "normal"


@dataclass(frozen=True)
class PoissonPairSpec:
    s: tuple


@dataclass(frozen=True, eq=False)
class ModelPair:
    """Data model ``x_model`` and target model ``y_model`` on a shared chart."""

    x_model: Model
    y_model: Model
    chart: Chart
    family: str = "custom"
    label: str = ""
    spec: object = None

    def __post_init__(self):
        if self.x_model.dim != self.y_model.dim or self.x_model.dim != self.chart.dim:
            raise SpecError("x-model, y-model and chart must share the parameter dimension")

    @property
    def dim(self) -> int:
        return self.chart.dim

    @property
    def same_models(self) -> bool:
        """True when data and target follow the same model (the conventional setting)."""
        return self.x_model is self.y_model

    def g(self, theta) -> np.ndarray:
        return self.x_model.metric(theta)

    def g_tilde(self, theta) -> np.ndarray:
        return self.y_model.metric(theta)

    def g_pred(self, theta) -> np.ndarray:
        """Predictive metric g g~^{-1} g."""
        g = self.g(theta)
        out = g @ np.linalg.solve(self.g_tilde(theta), g)
        return 0.5 * (out + out.T)

    @property
    def metric_x(self) -> MetricField:
        return MetricField(self.x_model.metric, self.chart, self.x_model.mode)

    @property
    def metric_y(self) -> MetricField:
        return MetricField(self.y_model.metric, self.chart, self.y_model.mode)

    @property
    def predictive_metric(self) -> MetricField:
        return MetricField(self.g_pred, self.chart, "derived-by-formula")

    def log_volume_element(self, thetas) -> np.ndarray:
        """log |g| - (1/2) log |g~| = log of the volume element of the predictive metric."""
        single = np.asarray(thetas).ndim == 1
        thetas = _as_thetas(thetas)
        out = (np.linalg.slogdet(self.x_model.metric_batch(thetas))[1]
               - 0.5 * np.linalg.slogdet(self.y_model.metric_batch(thetas))[1])
        return out[0] if single else out

    def describe(self) -> dict:
        return {"family": self.family, "label": self.label, "dim": self.dim,
                "x_model": self.x_model.describe(), "y_model": self.y_model.describe()}


def builtin_normal(spec: NormalPairSpec) -> ModelPair:
    """Example-1 pair: N_d(mu, cov_x) data, N_d(mu, cov_y) target."""
    cov_x = np.atleast_2d(np.asarray(spec.cov_x, float))
    cov_y = np.atleast_2d(np.asarray(spec.cov_y, float))
    if cov_x.shape != cov_y.shape:
        raise SpecError("cov_x and cov_y must have the same shape")
    chart = Chart("mean", cov_x.shape[0])
    xm = NormalModel(cov_x, chart)
    ym = xm if np.array_equal(cov_x, cov_y) else NormalModel(cov_y, chart)
    return ModelPair(xm, ym, chart, "normal", f"normal(d={chart.dim})", spec)


def builtin_location_scale(spec: LocationScalePairSpec = LocationScalePairSpec()) -> ModelPair:
    """Example-2 pair: location-scale families with base densities phi and phi~."""
    bx, by = base_density(spec.base_x), base_density(spec.base_y)
    chart = location_scale_chart()
    xm = LocationScaleModel(bx, chart)
    ym = xm if bx.to_dict() == by.to_dict() else LocationScaleModel(by, chart)
    for name, val in (("a", xm.a), ("b", xm.b), ("a~", ym.a), ("b~", ym.b)):
        if not val > 0:
            raise SpecError(f"location-scale constant {name} must be positive, got {val}")
    return ModelPair(xm, ym, chart, "location_scale", f"location-scale({bx.name}/{by.name})", spec)


def builtin_poisson(spec: PoissonPairSpec) -> ModelPair:
    """Example-3 pair: x_i ~ Po(lambda_i), y_i ~ Po(s_i lambda_i)."""
    s = np.atleast_1d(np.asarray(spec.s, float))
    chart = poisson_chart(s.size)
    xm = PoissonModel(np.ones(s.size), chart)
    ym = xm if np.all(s == 1.0) else PoissonModel(s, chart)
    return ModelPair(xm, ym, chart, "poisson", f"poisson(d={s.size})", spec)


def location_scale_params(pair: ModelPair) -> tuple[float, float, float, float]:
    """(a, b, a~, b~) of a location-scale pair."""
    if pair.family != "location_scale":
        raise SpecError(f"expected a location-scale pair, got {pair.family!r}")
    return pair.x_model.a, pair.x_model.b, pair.y_model.a, pair.y_model.b


def finite_predictive_metric(g, g_tilde, n: float) -> np.ndarray:
    """((N g)^{-1} - (N g + g~)^{-1})^{-1}, the finite-N analogue of N^2 g g~^{-1} g."""
    g = np.asarray(g, float)
    g_tilde = np.asarray(g_tilde, float)
    return np.linalg.inv(np.linalg.inv(n * g) - np.linalg.inv(n * g + g_tilde))
