"""Riemannian machinery on a d-dimensional parameter domain.

Points are plain 1-D float arrays.  A :class:`Chart` owns the domain
predicate (strict lower bounds) and the transition to a reference chart;
:class:`MetricField` and :class:`ScalarField` are thin wrappers around
callables.  Derivatives are central finite differences unless a field
supplies analytic ones.

The Laplacian uses the positive-divergence sign convention::

    Lap f = |g|^{-1/2} d_i (|g|^{1/2} g^{ij} d_j f)
          = g^{ij} (d_i d_j f - Gamma_ij^k d_k f)

so that Lap f <= 0 means superharmonic.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ChartMismatch, DomainError, NonSPDError, StepError

EPS = np.finfo(float).eps

# Richardson-extrapolated stencils (order 4) are used wherever a derivative
# feeds another derivative; the plain order-2 rules are the public default.
INTERNAL_ORDER = 4

# A stencil may not come closer to the domain boundary than this many steps.
BOUNDARY_STEPS = 4.0

SYMMETRY_TOL = 1e-12
SPD_REL_TOL = 1e-12


def _identity(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class Chart:
    """Coordinate chart on a box-shaped domain ``theta_i > lower_i``.

    ``to_reference``/``from_reference`` map to and from the family's
    reference chart; ``jacobian`` returns d(reference)/d(self).  Missing
    maps mean the chart *is* the reference chart.
    """

    name: str
    dim: int
    lower: np.ndarray = None
    to_reference: Optional[Callable] = None
    from_reference: Optional[Callable] = None
    jacobian: Optional[Callable] = None
    scale: np.ndarray = None

    def __post_init__(self):
        lower = np.full(self.dim, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        scale = np.ones(self.dim) if self.scale is None else np.asarray(self.scale, float)
        if lower.shape != (self.dim,) or scale.shape != (self.dim,):
            raise ChartMismatch(f"chart {self.name!r}: bounds/scale must have length {self.dim}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "scale", scale)

    @property
    def is_reference(self) -> bool:
        return self.to_reference is None

    @property
    def positive_axes(self) -> np.ndarray:
        """Boolean mask of coordinates bounded below (log-transformed in grids)."""
        return np.isfinite(self.lower)

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(theta.shape == (self.dim,) and np.all(np.isfinite(theta)) and np.all(theta > self.lower))

    def check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise DomainError(f"chart {self.name!r} expects {self.dim} coordinates, got shape {theta.shape}")
        if not self.contains(theta):
            raise DomainError(f"point {theta} outside chart {self.name!r}")
        return theta

    def ref(self, theta) -> np.ndarray:
        return _identity(theta) if self.to_reference is None else np.asarray(self.to_reference(theta), float)

    def from_ref(self, r) -> np.ndarray:
        return _identity(r) if self.from_reference is None else np.asarray(self.from_reference(r), float)

    def ref_jacobian(self, theta) -> np.ndarray:
        """d(reference coords)/d(this chart's coords) at ``theta``."""
        if self.to_reference is None:
            return np.eye(self.dim)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(theta), float)
        return np.moveaxis(fd_gradient(self.ref, theta, order=INTERNAL_ORDER, chart=self), 0, -1)


def reference_chart(dim: int, lower=None, name: str = "reference", scale=None) -> Chart:
    return Chart(name=name, dim=dim, lower=lower, scale=scale)


def transition(chart_from: Chart, chart_to: Chart):
    """Return ``(to_from, jac)`` mapping chart_to coords to chart_from coords.

    ``jac(xi)`` is d(theta_from)/d(xi_to).
    """
    if chart_from.dim != chart_to.dim:
        raise ChartMismatch(f"cannot relate {chart_from.name!r} (d={chart_from.dim}) and "
                            f"{chart_to.name!r} (d={chart_to.dim})")

    def to_from(xi):
        return chart_from.from_ref(chart_to.ref(xi))

    def jac(xi):
        theta = to_from(xi)
        return np.linalg.solve(chart_from.ref_jacobian(theta), chart_to.ref_jacobian(xi))

    return to_from, jac


# ----------------------------------------------------------------------------
# Fields
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MetricField:
    """theta -> symmetric positive-definite d x d matrix."""

    func: Callable
    chart: Chart
    provenance: str = "analytic"

    def __call__(self, theta) -> np.ndarray:
        return np.asarray(self.func(np.asarray(theta, dtype=float)), dtype=float)

    @property
    def dim(self) -> int:
        return self.chart.dim

    def scaled(self, c: float) -> "MetricField":
        """The metric ``c * g`` (same chart)."""
        return MetricField(lambda th: c * self.func(th), self.chart, "derived-by-formula")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Scalar function with optional analytic gradient and Hessian.

    ``func`` should accept a single point of shape (d,); builtin fields also
    broadcast over arrays of shape (..., d).
    """

    func: Callable
    chart: Optional[Chart] = None
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None

    def __call__(self, theta):
        return self.func(np.asarray(theta, dtype=float))

    def gradient(self, theta, order: int = INTERNAL_ORDER) -> np.ndarray:
        if self.grad is not None:
            return np.asarray(self.grad(np.asarray(theta, float)), float)
        return fd_gradient(self.func, theta, order=order, chart=self.chart)

    def hessian(self, theta, order: int = INTERNAL_ORDER) -> np.ndarray:
        if self.hess is not None:
            return np.asarray(self.hess(np.asarray(theta, float)), float)
        return fd_hessian(self.func, theta, order=order, chart=self.chart)


# ----------------------------------------------------------------------------
# Finite differences
# ----------------------------------------------------------------------------

def _steps(theta: np.ndarray, power: float, scale) -> np.ndarray:
    scale = np.ones_like(theta) if scale is None else np.broadcast_to(np.asarray(scale, float), theta.shape)
    h = EPS ** power * np.maximum(np.abs(theta), scale)
    if not np.all(np.isfinite(h)) or np.any(h <= 0):
        raise StepError(f"finite-difference step degenerate at {theta}")
    # make theta + h exactly representable so the step is what we divide by
    h = (theta + h) - theta
    if np.any(h <= 0):
        raise StepError(f"finite-difference step underflowed at {theta}")
    return h


def _guard(theta: np.ndarray, h: np.ndarray, chart: Optional[Chart]) -> None:
    if chart is None:
        return
    for i in range(theta.size):
        for sign in (-1.0, 1.0):
            probe = theta.copy()
            probe[i] += sign * BOUNDARY_STEPS * h[i]
            if not chart.contains(probe):
                raise DomainError(f"point {theta} lies within {BOUNDARY_STEPS:g} steps of the boundary "
                                  f"of chart {chart.name!r} along axis {i}")


def _default_scale(chart, scale):
    if scale is not None:
        return scale
    return None if chart is None else chart.scale


def fd_gradient(f: Callable, theta, *, order: int = 2, scale=None, chart: Optional[Chart] = None) -> np.ndarray:
    """Central-difference gradient of a (possibly array-valued) function.

    The derivative index comes first: the result has shape ``(d, *f.shape)``.
    Step ``h_i = eps^(1/3) max(|theta_i|, scale_i)`` for order 2; order 4 is
    Richardson extrapolation of the order-2 rule with ``eps^(1/5)`` steps.
    """
    theta = np.asarray(theta, dtype=float)
    if chart is not None:
        chart.check(theta)
    scale = _default_scale(chart, scale)
    if order == 2:
        h = _steps(theta, 1.0 / 3.0, scale)
    elif order == 4:
        h = _steps(theta, 1.0 / 5.0, scale)
    else:
        raise ValueError("order must be 2 or 4")
    _guard(theta, h, chart)

    def central(step):
        out = []
        for i in range(theta.size):
            e = np.zeros_like(theta)
            e[i] = step[i]
            out.append((np.asarray(f(theta + e), float) - np.asarray(f(theta - e), float)) / (2.0 * step[i]))
        return np.stack(out)

    d1 = central(h)
    if order == 2:
        return d1
    return (4.0 * d1 - central(2.0 * h)) / 3.0


def fd_hessian(f: Callable, theta, *, order: int = 2, scale=None, chart: Optional[Chart] = None) -> np.ndarray:
    """Central-difference Hessian, symmetrized; shape ``(d, d, *f.shape)``.

    Step ``eps^(1/4)``-scaled for order 2 and ``eps^(1/6)`` for the
    Richardson-extrapolated order-4 rule.
    """
    theta = np.asarray(theta, dtype=float)
    if chart is not None:
        chart.check(theta)
    scale = _default_scale(chart, scale)
    if order == 2:
        h = _steps(theta, 1.0 / 4.0, scale)
    elif order == 4:
        h = _steps(theta, 1.0 / 6.0, scale)
    else:
        raise ValueError("order must be 2 or 4")
    _guard(theta, h, chart)
    f0 = np.asarray(f(theta), float)
    d = theta.size

    def second(step):
        H = np.empty((d, d) + f0.shape)
        for i in range(d):
            ei = np.zeros(d)
            ei[i] = step[i]
            H[i, i] = (np.asarray(f(theta + ei), float) - 2.0 * f0 + np.asarray(f(theta - ei), float)) / step[i] ** 2
            for j in range(i + 1, d):
                ej = np.zeros(d)
                ej[j] = step[j]
                val = (np.asarray(f(theta + ei + ej), float) - np.asarray(f(theta + ei - ej), float)
                       - np.asarray(f(theta - ei + ej), float) + np.asarray(f(theta - ei - ej), float))
                H[i, j] = H[j, i] = val / (4.0 * step[i] * step[j])
        return H

    H = second(h)
    if order == 4:
        H = (4.0 * H - second(2.0 * h)) / 3.0
    return 0.5 * (H + np.swapaxes(H, 0, 1))


# ----------------------------------------------------------------------------
# Metric operations
# ----------------------------------------------------------------------------

def check_spd(G: np.ndarray) -> np.ndarray:
    """Raise :class:`NonSPDError` unless ``G`` is symmetric positive definite."""
    G = np.asarray(G, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1] or not np.all(np.isfinite(G)):
        raise NonSPDError(f"metric must be a finite square matrix, got {G!r}")
    scale = np.max(np.abs(G))
    if np.max(np.abs(G - G.T)) > SYMMETRY_TOL * scale:
        raise NonSPDError("metric is not symmetric")
    eig = np.linalg.eigvalsh(0.5 * (G + G.T))
    if eig[0] <= SPD_REL_TOL * np.trace(G):
        raise NonSPDError(f"metric is not positive definite (eigenvalues {eig})")
    return G


def metric_inverse_and_det(m: MetricField, theta) -> tuple[np.ndarray, np.ndarray, float]:
    """Return ``(G, G^{-1}, det G)`` at ``theta``."""
    theta = m.chart.check(theta)
    G = check_spd(m(theta))
    return G, np.linalg.inv(G), float(np.linalg.det(G))


def metric_derivative(m: MetricField, theta, order: int = INTERNAL_ORDER) -> np.ndarray:
    """``dG[k, i, j] = d_k g_ij``."""
    return fd_gradient(m, theta, order=order, chart=m.chart)


def riemannian_connection(m: MetricField, theta, order: int = INTERNAL_ORDER) -> np.ndarray:
    """Levi-Civita coefficients of the first kind, ``Gamma_ijk`` (last index lowered).

    Gamma_ijk = (d_i g_jk + d_j g_ki - d_k g_ij) / 2
    """
    dG = metric_derivative(m, theta, order)
    return 0.5 * (dG + np.einsum("jki->ijk", dG) - np.einsum("kij->ijk", dG))


def raise_last(gamma: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    """``Gamma_ij^k = sum_l Gamma_ijl g^{kl}``."""
    return np.einsum("ijl,kl->ijk", gamma, ginv)


def christoffel(m: MetricField, theta, order: int = INTERNAL_ORDER) -> np.ndarray:
    """Levi-Civita coefficients of the second kind, ``Gamma_ij^k``."""
    _, ginv, _ = metric_inverse_and_det(m, theta)
    return raise_last(riemannian_connection(m, theta, order), ginv)


def connection_trace(m: MetricField, theta, order: int = INTERNAL_ORDER) -> np.ndarray:
    """``sum_i Gamma_ki^i``; equals d_k log |g|^{1/2}."""
    return np.einsum("kii->k", christoffel(m, theta, order))


def log_sqrt_det_gradient(m: MetricField, theta, order: int = INTERNAL_ORDER) -> np.ndarray:
    """d_k log |g|^{1/2} by differencing the log-determinant directly."""
    return fd_gradient(lambda th: 0.5 * np.linalg.slogdet(m(th))[1], theta, order=order, chart=m.chart)


def _laplacian_parts(m: MetricField, f: ScalarField, theta) -> tuple[float, float]:
    _, ginv, _ = metric_inverse_and_det(m, theta)
    gam = raise_last(riemannian_connection(m, theta), ginv)
    grad = f.gradient(theta)
    hess = f.hessian(theta)
    terms = ginv * (hess - np.einsum("ijk,k->ij", gam, grad))
    magnitude = float(np.sum(np.abs(ginv * hess)) + np.sum(np.abs(ginv[:, :, None] * gam * grad)))
    return float(np.sum(terms)), magnitude


def laplace_beltrami(m: MetricField, f: ScalarField, theta) -> float:
    """Laplace-Beltrami operator of ``m`` applied to ``f`` at ``theta``."""
    return _laplacian_parts(m, f, theta)[0]


def laplace_beltrami_divergence(m: MetricField, f: ScalarField, theta) -> float:
    """Same operator in divergence form, differencing ``|g|^{1/2} g^{ij} d_j f``.

    Slower and less accurate than :func:`laplace_beltrami`; kept as an
    independent cross-check of the covariant form.
    """
    theta = m.chart.check(theta)

    def flux(th):
        G = m(th)
        return np.sqrt(np.linalg.det(G)) * np.linalg.solve(G, f.gradient(th))

    dflux = fd_gradient(flux, theta, order=INTERNAL_ORDER, chart=m.chart)
    return float(np.trace(dflux) / np.sqrt(np.linalg.det(m(theta))))


def pushforward_metric(m: MetricField, chart_from: Chart, chart_to: Chart) -> MetricField:
    """Express ``m`` (given in ``chart_from``) in the coordinates of ``chart_to``.

    g'_{ab}(xi) = J_ia g_ij(theta(xi)) J_jb with J = d theta / d xi.
    """
    to_from, jac = transition(chart_from, chart_to)

    def func(xi):
        J = jac(xi)
        return J.T @ m(to_from(xi)) @ J

    return MetricField(func, chart_to, "derived-by-formula")


def pullback_scalar(f: ScalarField, chart_from: Chart, chart_to: Chart) -> ScalarField:
    """The scalar ``f`` (given in ``chart_from``) as a function of ``chart_to`` coordinates."""
    to_from, _ = transition(chart_from, chart_to)
    return ScalarField(lambda xi: f(to_from(xi)), chart_to)
