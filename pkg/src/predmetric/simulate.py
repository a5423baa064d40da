"""Finite-N Monte Carlo estimation of KL risks and paired risk differences.

Every replicate draws one dataset and evaluates the predictive density of
every prior on it (common random numbers), so the differences between
priors carry far less noise than the risks themselves.

Seeding: replicate ``r`` of stream ``k`` uses
``numpy.random.SeedSequence(seed, spawn_key=(k, r))``; the substream is
fixed before any work is dispatched, and results are stored by replicate
index and reduced in index order, so reports do not depend on the number
of worker threads.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import NumericalError, SpecError, TruncationError
from .models import ModelPair, NormalModel, PoissonModel
from .predictive import PredictiveDensity, predictive_density
from .priors import PriorSpec
from .risk_asym import leading_risk_term, risk_diff_thm2

SEED_SCHEME = "numpy.random.SeedSequence(seed, spawn_key=(stream, replicate)); PCG64 per replicate"

KL_FLOOR = -1e-10
KL_TAIL = 1e-12
# absolute error tolerated from the dropped count tail (negligible against
# paired differences of order 1e-6 and above)
KL_TAIL_ABS = 1e-12
KL_SCHEMES = ("auto", "exact-sum", "quadrature", "monte-carlo")


# ----------------------------------------------------------------------------
# KL divergence
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KLRule:
    """Target points, weights and true log-densities for E_y[. | theta]."""

    y: np.ndarray
    weights: np.ndarray
    log_true: np.ndarray
    scheme: str
    tail_mass: float = 0.0


def kl_rule(pair: ModelPair, theta, scheme: str = "auto", *, n_nodes: int = 128, draws: int = 0,
            rng: Optional[np.random.Generator] = None, tail: float = KL_TAIL) -> KLRule:
    """Build the y-rule used by :func:`kl_divergence` (reusable across datasets)."""
    ym = pair.y_model
    theta = np.asarray(theta, float)
    if scheme not in KL_SCHEMES:
        raise SpecError(f"unknown KL scheme {scheme!r}")
    if scheme == "monte-carlo":
        if draws < 1 or rng is None:
            raise SpecError("monte-carlo KL needs draws >= 1 and an rng")
        y = ym.sample(theta, draws, rng)
        w = np.full(draws, 1.0 / draws)
        return KLRule(y, w, ym.log_density(y, theta)[:, 0], scheme)
    if isinstance(ym, PoissonModel):
        y, w = ym.expectation_rule(theta, tail=tail)
        dropped = float(1.0 - np.sum(w))
        return KLRule(y, w, ym.log_density(y, theta)[:, 0], "exact-sum", max(dropped, 0.0))
    # tensor rules grow as n^d; the log-ratio integrands are smooth enough
    # for fewer nodes per axis in d >= 2
    per_axis = n_nodes if ym.obs_dim == 1 else min(n_nodes, 32)
    y, w = ym.expectation_rule(theta, per_axis)
    return KLRule(y, w, ym.log_density(y, theta)[:, 0], "quadrature")


def gaussian_kl(mean_p, cov_p, mean_q, cov_q) -> float:
    """KL(N(mean_p, cov_p) || N(mean_q, cov_q))."""
    cov_p, cov_q = np.atleast_2d(cov_p), np.atleast_2d(cov_q)
    diff = np.atleast_1d(mean_q - mean_p)
    sol = np.linalg.solve(cov_q, np.column_stack([cov_p, diff]))
    d = diff.size
    return 0.5 * float(np.trace(sol[:, :d]) + diff @ sol[:, d] - d
                       + np.linalg.slogdet(cov_q)[1] - np.linalg.slogdet(cov_p)[1])


def kl_divergence(pair: ModelPair, theta, predictive: PredictiveDensity, rule: Optional[KLRule] = None,
                  **kwargs) -> float:
    """D(p~(.|theta), predictive) = E[log p~(y|theta) - log predictive(y)].

    Gaussian closed form when both sides are normal; otherwise the sum over
    ``rule`` (exact truncated sum for counts, Gauss rule for continuous
    targets).  For counts the dropped tail mass is bounded against the KL
    scale and :class:`TruncationError` is raised when it is too large.
    """
    theta = np.asarray(theta, float)
    if predictive.gaussian is not None and isinstance(pair.y_model, NormalModel):
        mean, cov = predictive.gaussian
        return gaussian_kl(theta, pair.y_model.cov, mean, cov)
    rule = rule or kl_rule(pair, theta, **kwargs)
    log_pred = predictive.logpdf(rule.y)
    log_ratio = rule.log_true - log_pred
    value = float(np.dot(rule.weights, log_ratio))
    if rule.tail_mass > 0.0:
        # beyond the cut the log-ratio grows at most linearly; bound it by the
        # largest value seen on the kept support plus one
        bound = rule.tail_mass * (np.max(np.abs(log_ratio)) + 1.0)
        if bound > 1e-8 * abs(value) and bound > KL_TAIL_ABS:
            raise TruncationError(f"tail mass {rule.tail_mass:.3g} too large for KL {value:.3g}")
    return value


# ----------------------------------------------------------------------------
# Plans and reports
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SimPlan:
    """One Monte Carlo experiment; ``reference`` indexes the baseline prior."""

    pair: ModelPair
    theta: np.ndarray
    n: int
    priors: tuple
    replicates: int
    seed: int
    kl_scheme: str = "auto"
    kl_draws: int = 0
    kl_nodes: int = 128
    predictive_method: str = "auto"
    reference: int = -1
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "theta", self.pair.chart.check(self.theta))
        object.__setattr__(self, "priors", tuple(self.priors))
        if self.replicates < 2:
            raise SpecError("a plan needs at least 2 replicates")
        if self.n < 1:
            raise SpecError("N must be >= 1")
        if not self.priors:
            raise SpecError("a plan needs at least one prior")
        if not (isinstance(self.seed, (int, np.integer)) and self.seed >= 0):
            raise SpecError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.kl_scheme not in KL_SCHEMES:
            raise SpecError(f"unknown KL scheme {self.kl_scheme!r}")
        if not -len(self.priors) <= self.reference < len(self.priors):
            raise SpecError("reference prior index out of range")

    @property
    def reference_index(self) -> int:
        return self.reference % len(self.priors)


@dataclass
class RiskReport:
    """Per-prior risks and paired differences against the reference prior."""

    n: int
    replicates: int
    seed: int
    stream: int
    prior_names: list
    reference: int
    risk: np.ndarray
    risk_se: np.ndarray
    diff: np.ndarray
    diff_se: np.ndarray
    unpaired_se: np.ndarray
    asymptote: np.ndarray
    leading_term: float
    kl: np.ndarray = field(repr=False)
    wall_clock: float = 0.0

    @property
    def scaled_diff(self) -> np.ndarray:
        return self.n ** 2 * self.diff

    @property
    def scaled_diff_se(self) -> np.ndarray:
        return self.n ** 2 * self.diff_se

    def rows(self) -> list[dict]:
        out = []
        for i, name in enumerate(self.prior_names):
            out.append({
                "N": self.n, "prior": name, "risk": self.risk[i], "risk_se": self.risk_se[i],
                "N_risk": self.n * self.risk[i], "N_risk_se": self.n * self.risk_se[i],
                "diff": self.diff[i], "diff_se": self.diff_se[i],
                "N2_diff": self.scaled_diff[i], "N2_diff_se": self.scaled_diff_se[i],
                "asymptote": self.asymptote[i], "leading_N_risk": self.n * self.leading_term,
            })
        return out

    def to_dict(self) -> dict:
        return {
            "N": self.n, "replicates": self.replicates, "seed": self.seed, "stream": self.stream,
            "seed_scheme": SEED_SCHEME, "reference": self.prior_names[self.reference],
            "rows": [{k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()}
                     for r in self.rows()],
            "wall_clock_s": self.wall_clock,
        }


def _replicate_stream(plan: SimPlan, r: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(plan.seed, spawn_key=(plan.stream, r)))


def _run_replicate(plan: SimPlan, r: int, rule: Optional[KLRule]) -> np.ndarray:
    rng = _replicate_stream(plan, r)
    data = plan.pair.x_model.sample(plan.theta, plan.n, rng)
    local_rule = rule
    if plan.kl_scheme == "monte-carlo":
        local_rule = kl_rule(plan.pair, plan.theta, "monte-carlo", draws=plan.kl_draws, rng=rng)
    out = np.empty(len(plan.priors))
    probe = None if local_rule is None else local_rule.y
    for j, prior in enumerate(plan.priors):
        pred = predictive_density(plan.pair, prior, data, plan.predictive_method, probe_y=probe)
        out[j] = kl_divergence(plan.pair, plan.theta, pred, local_rule)
    return out


def _run_chunk(plan: SimPlan, indices: range, rule, out: np.ndarray) -> None:
    for r in indices:
        try:
            out[r] = _run_replicate(plan, r, rule)
        except Exception as exc:
            exc.replicate = r
            exc.args = (f"replicate {r}: {exc}",) + exc.args[1:]
            raise


def mc_risk(plan: SimPlan, threads: int = 1) -> RiskReport:
    """Run ``plan``; the report is bit-identical for any ``threads``."""
    start = time.perf_counter()
    pair, theta = plan.pair, plan.theta
    rule = None
    if plan.kl_scheme != "monte-carlo":
        rule = kl_rule(pair, theta, plan.kl_scheme, n_nodes=plan.kl_nodes)
    kl = np.empty((plan.replicates, len(plan.priors)))
    threads = max(1, int(threads))
    bounds = np.linspace(0, plan.replicates, min(threads * 4, plan.replicates) + 1).astype(int)
    chunks = [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if threads == 1:
        for c in chunks:
            _run_chunk(plan, c, rule, kl)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for fut in [pool.submit(_run_chunk, plan, c, rule, kl) for c in chunks]:
                fut.result()
    if np.min(kl) < KL_FLOOR:
        r, j = np.unravel_index(np.argmin(kl), kl.shape)
        raise NumericalError(f"replicate {r}: negative KL {kl[r, j]:.3g} for prior {plan.priors[j].name!r}")
    return _summarize(plan, kl, time.perf_counter() - start)


def _summarize(plan: SimPlan, kl: np.ndarray, wall: float) -> RiskReport:
    R = plan.replicates
    ref = plan.reference_index
    risk = kl.mean(axis=0)
    var = kl.var(axis=0, ddof=1)
    d = kl - kl[:, [ref]]
    diff = d.mean(axis=0)
    diff_se = np.sqrt(d.var(axis=0, ddof=1) / R)
    unpaired = np.sqrt((var + var[ref]) / R)
    unpaired[ref] = 0.0
    ref_asym = risk_diff_thm2(plan.pair, plan.priors[ref], plan.theta)
    asym = np.array([risk_diff_thm2(plan.pair, p, plan.theta) - ref_asym for p in plan.priors])
    return RiskReport(plan.n, R, plan.seed, plan.stream, [p.name for p in plan.priors], ref, risk,
                      np.sqrt(var / R), diff, diff_se, unpaired, asym,
                      leading_risk_term(plan.pair, plan.theta, plan.n), kl, wall)


def asymptote_convergence(pair: ModelPair, priors: Sequence[PriorSpec], theta, n_list: Sequence[int],
                          replicates: int, seed: int, threads: int = 1, **plan_kwargs) -> list[RiskReport]:
    """One paired MC report per N (stream = N); trends are reported, not asserted."""
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise SpecError("N list must be increasing")
    return [mc_risk(SimPlan(pair, theta, n, tuple(priors), replicates, seed, stream=n, **plan_kwargs), threads)
            for n in n_list]
