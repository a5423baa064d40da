"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Tolerances and sizes are the stated ones; nothing here is loosened to make
a criterion pass.
"""
import csv
import io
import json
import math
import time

import numpy as np
from scipy import stats

from predmetric.cli import main
from predmetric.geometry import laplace_beltrami, pushforward_metric
from predmetric.models import (LocationScalePairSpec, NormalPairSpec, PoissonPairSpec, builtin_location_scale,
                               builtin_normal, builtin_poisson, finite_predictive_metric, location_scale_params,
                               poisson_xi_chart, upper_half_plane_chart)
from predmetric.checks import default_box
from predmetric.predictive import (normal_predictive_uniform, poisson_predictive_P, poisson_predictive_S,
                                   posterior_grid, total_mass_discrete)
from predmetric.priors import (CkappaParams, cosh_rho, prior_ckappa, prior_right_invariant, prior_stein_poisson,
                               probe_points, random_bump_prior, volume_element_prior)
from predmetric.risk_asym import (ckappa_risk_closed, conventional_risk_diff, risk_diff_thm1, risk_diff_thm2,
                                  stein_poisson_risk_closed)
from predmetric.simulate import SimPlan, mc_risk

SEED = 20240611


def builtin_pairs():
    return [
        builtin_normal(NormalPairSpec([[1.0, 0.3], [0.3, 2.0]], [[1.5, -0.2], [-0.2, 0.7]])),
        builtin_location_scale(LocationScalePairSpec()),
        builtin_poisson(PoissonPairSpec((0.5, 1.0, 2.0))),
    ]


def test_criterion_01_route_agreement(acceptance_log):
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    worst, count = 0.0, 0
    for k, pair in enumerate(builtin_pairs()):
        low, high = default_box(pair)
        pts = probe_points(pair.chart, low, high, 20, seed=SEED + k)
        ref = volume_element_prior(pair)
        for _ in range(20):
            prior = random_bump_prior(pair, rng, low, high)
            for th in pts:
                t1 = risk_diff_thm1(pair, prior, ref, th)
                t2 = risk_diff_thm2(pair, prior, th)
                worst = max(worst, abs(t1 - t2) / (1.0 + abs(t2)))
                count += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-5 and elapsed < 60.0 and count == 3 * 20 * 20
    acceptance_log(1, ok, f"max |thm1-thm2|/(1+|v|) = {worst:.2e} over {count} cases in {elapsed:.1f}s")
    assert ok


def _points_at_distance(pair, kappa, rho, tau):
    """(mu, sigma) at predictive-metric distance rho from (0, kappa), direction tau."""
    k = location_scale_params(pair)
    weight = k[0] ** 2 * k[3] / (k[1] ** 2 * k[2])
    # geodesic circles of the upper half-plane are Euclidean circles
    u = kappa * math.sinh(rho) * math.sin(tau)
    v = kappa * (math.cosh(rho) + math.sinh(rho) * math.cos(tau))
    return np.array([u / math.sqrt(weight), v])


def test_criterion_02_location_scale_closed_forms(acceptance_log):
    pair = builtin_location_scale()
    _, b, _, b_t = location_scale_params(pair)
    low, high = default_box(pair)
    pts = probe_points(pair.chart, low, high, 100, seed=SEED)
    right = prior_right_invariant(pair)
    err_r = max(abs(risk_diff_thm2(pair, right, th) + b_t / (2 * b * b)) for th in pts)
    err_c, err_rho, n = 0.0, 0.0, 0
    for c in (0.0, 0.25, 0.5, 1.0, 2.0):
        for kappa in (0.5, 1.0, 3.0):
            prior = prior_ckappa(pair, CkappaParams(c, kappa))
            for rho in (0.0, 0.3, 1.0, 2.0, 4.0):
                for tau in (0.0, 1.0, 2.5, 4.0):
                    th = _points_at_distance(pair, kappa, rho, tau)
                    err_rho = max(err_rho, abs(cosh_rho(pair, th[0], th[1], kappa) - math.cosh(rho)) / math.cosh(rho))
                    expected = float(ckappa_risk_closed(b_t / b ** 2, c, math.cosh(rho)))
                    err_c = max(err_c, abs(risk_diff_thm2(pair, prior, th) - expected))
                    n += 1
    ok = err_r <= 1e-8 and err_c <= 1e-6 and err_rho < 1e-12
    acceptance_log(2, ok, f"pi_R max err {err_r:.2e} at {len(pts)} probes; c-kappa max err {err_c:.2e} "
                          f"over {n} (c, kappa, rho, tau) points")
    assert ok


def test_criterion_03_figure1(acceptance_log, tmp_path):
    buf = io.StringIO()
    code = main(["figure1"], buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    row0 = [float(v) for v in rows[1]]
    err0 = max(abs(a - b) for a, b in zip(row0, [0.0, 0.0, -0.5, -0.5, -2.0, -1.0]))
    cfg = tmp_path / "fig.json"
    cfg.write_text(json.dumps({"seed": 0, "figure1": {"c": [0.0, 0.25, 0.5, 0.75, 1.0], "n_rho": 601,
                                                      "rho_max": 12.0}}))
    buf2 = io.StringIO()
    code2 = main(["figure1", "--config", str(cfg)], buf2)
    table = list(csv.reader(io.StringIO(buf2.getvalue())))
    curves = np.array([[float(v) for v in r[4:]] for r in table[1:]])
    default_curves = np.array([[float(v) for v in r[4:]] for r in rows[1:]])
    top = max(curves.max(), default_curves.max())
    ok = code == 0 and code2 == 0 and err0 <= 1e-10 and top <= -0.5
    acceptance_log(3, ok, f"rho=0 row {row0[1:]} (max err {err0:.1e}); max of c in [0,1] curves = {top:.6f}")
    assert ok


def test_criterion_04_poisson_harmonic(acceptance_log):
    rng = np.random.default_rng(SEED)
    worst_lap, worst_risk = 0.0, 0.0
    for d in (3, 4, 6):
        pair = builtin_poisson(PoissonPairSpec(tuple(rng.uniform(0.3, 3.0, d))))
        prior = prior_stein_poisson(pair)
        lam = np.exp(rng.uniform(math.log(0.1), math.log(10.0), size=(100, d)))
        for th in lam:
            worst_lap = max(worst_lap, abs(laplace_beltrami(pair.predictive_metric, prior.ratio, th)))
            worst_risk = max(worst_risk, abs(risk_diff_thm2(pair, prior, th) - stein_poisson_risk_closed(pair, th)))
    ok = worst_lap <= 1e-7 and worst_risk <= 1e-6
    acceptance_log(4, ok, f"max |Lap(pi_S/pi_P)| = {worst_lap:.2e}; max risk error {worst_risk:.2e} (d = 3, 4, 6)")
    assert ok


def test_criterion_05_isometries(acceptance_log):
    rng = np.random.default_rng(SEED)
    pois = builtin_poisson(PoissonPairSpec((0.5, 1.0, 2.0)))
    xi = poisson_xi_chart(pois.y_model.s)
    pm = pushforward_metric(pois.predictive_metric, pois.chart, xi)
    err_p = max(np.max(np.abs(pm(xi.from_ref(th)) - np.eye(3)))
                for th in np.exp(rng.uniform(-2, 2, size=(50, 3))))
    ls = builtin_location_scale()
    a, b, a_t, b_t = location_scale_params(ls)
    uv = upper_half_plane_chart(a, b, a_t, b_t)
    pm2 = pushforward_metric(ls.predictive_metric, ls.chart, uv)
    err_l = 0.0
    for th in np.column_stack([rng.uniform(-3, 3, 50), np.exp(rng.uniform(-2, 2, 50))]):
        p = uv.from_ref(th)
        target = (b * b / b_t) / p[1] ** 2 * np.eye(2)
        err_l = max(err_l, np.max(np.abs(pm2(p) - target)))
    ok = err_p <= 1e-10 and err_l <= 1e-10
    acceptance_log(5, ok, f"Poisson xi-chart error {err_p:.1e}; location-scale (u, v) error {err_l:.1e}")
    assert ok


def _nb_upper(s_eff, x, tail=1e-10):
    # count cut from the negative-binomial marginals of the volume-element
    # predictive; the dropped mass is far below the 1e-6 criterion
    return (stats.nbinom.isf(tail, x + 0.5, 1.0 / (1.0 + s_eff)) + 5).astype(int)


def test_criterion_06_predictive_oracles(acceptance_log):
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    errs = {"normal": 0.0, "poisson_P": 0.0, "poisson_S": 0.0}
    mass_err = 0.0

    normal = builtin_normal(NormalPairSpec([[1.0, 0.3], [0.3, 2.0]], [[1.5, -0.2], [-0.2, 0.7]]))
    uniform = volume_element_prior(normal)
    gh_z, gh_w = np.polynomial.hermite_e.hermegauss(30)
    for k in range(50):
        mu, n = rng.uniform(-2, 2, 2), int(rng.integers(1, 21))
        data = normal.x_model.sample(mu, n, rng)
        y = normal.y_model.sample(mu, 4, rng)
        closed = normal_predictive_uniform(normal, n, data.mean(axis=0))
        grid = posterior_grid(normal, uniform, data, probe_y=y)
        errs["normal"] = max(errs["normal"], np.max(np.abs(np.exp(grid.predictive_logpdf(y)) / closed.pdf(y) - 1)))
        if k < 3:
            # Gauss-Hermite in the whitened coordinates of the closed form
            mean, cov = closed.gaussian
            chol = np.linalg.cholesky(cov)
            z = np.stack(np.meshgrid(gh_z, gh_z, indexing="ij"), -1).reshape(-1, 2)
            w = np.outer(gh_w, gh_w).ravel()
            pts = mean + z @ chol.T
            jac = np.prod(np.diag(chol))
            ref = np.exp(-0.5 * np.sum(z * z, axis=1))
            for dens in (closed.pdf(pts), np.exp(grid.predictive_logpdf(pts))):
                mass_err = max(mass_err, abs(np.sum(w * dens * jac / ref) - 1))

    pair_p = builtin_poisson(PoissonPairSpec((0.5, 2.0)))
    vol = volume_element_prior(pair_p)
    for k in range(50):
        lam, n = rng.uniform(0.3, 5.0, 2), int(rng.integers(1, 6))
        data = pair_p.x_model.sample(lam, n, rng)
        y = pair_p.y_model.sample(lam, 4, rng)
        closed = poisson_predictive_P(pair_p, data.sum(axis=0), n)
        grid = posterior_grid(pair_p, vol, data, probe_y=y)
        errs["poisson_P"] = max(errs["poisson_P"],
                                np.max(np.abs(np.exp(grid.predictive_logpdf(y)) / closed.pdf(y) - 1)))
        upper = _nb_upper(pair_p.y_model.s / n, data.sum(axis=0))
        mass_err = max(mass_err, abs(total_mass_discrete(closed, upper) - 1))
        if k < 3:
            mass_err = max(mass_err, abs(total_mass_discrete(grid.density(), upper) - 1))

    pair_s = builtin_poisson(PoissonPairSpec((0.5, 1.0, 2.0)))
    stein = prior_stein_poisson(pair_s)
    for _ in range(50):
        lam, n = rng.uniform(0.3, 3.0, 3), int(rng.integers(1, 6))
        data = pair_s.x_model.sample(lam, n, rng)
        y = pair_s.y_model.sample(lam, 4, rng)
        closed = poisson_predictive_S(pair_s, data.sum(axis=0), n)
        grid = posterior_grid(pair_s, stein, data, probe_y=y)
        errs["poisson_S"] = max(errs["poisson_S"],
                                np.max(np.abs(np.exp(grid.predictive_logpdf(y)) / closed.pdf(y) - 1)))
        upper = _nb_upper(pair_s.y_model.s / n, data.sum(axis=0))
        mass_err = max(mass_err, abs(total_mass_discrete(closed, upper) - 1))

    elapsed = time.perf_counter() - start
    ok = max(errs.values()) <= 1e-6 and mass_err <= 1e-6 and elapsed < 300.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    acceptance_log(6, ok, f"max relative error: {detail}; max |mass - 1| = {mass_err:.1e}; {elapsed:.0f}s")
    assert ok


def test_criterion_07_monte_carlo(acceptance_log):
    pair = builtin_location_scale()
    priors = (prior_right_invariant(pair), volume_element_prior(pair))
    start = time.perf_counter()
    rep = mc_risk(SimPlan(pair, [0.0, 1.0], 200, priors, 10_000, seed=SEED, stream=200))
    elapsed = time.perf_counter() - start
    est, se = rep.scaled_diff[0], rep.scaled_diff_se[0]
    # some value in [-0.35, -0.15] lies within 3 SE of the estimate
    diff_ok = est + 3 * se >= -0.35 and est - 3 * se <= -0.15
    n_risk, n_se = 200 * rep.risk[1], 200 * rep.risk_se[1]
    lead_ok = abs(n_risk - 200 * rep.leading_term) <= 3 * n_se
    ok = diff_ok and lead_ok and elapsed < 900.0
    acceptance_log(7, ok, f"N^2 diff = {est:.4f} +- {se:.4f} (asymptote -0.25); N risk_P = {n_risk:.4f} +- "
                          f"{n_se:.4f} (leading term {200 * rep.leading_term:g}); {elapsed:.0f}s")
    assert ok


def test_criterion_08_matrix_identity(acceptance_log):
    rng = np.random.default_rng(SEED)
    worst_ratio = 0.0
    for trial in range(25):
        d = 1 + trial % 5
        a, b = rng.normal(size=(d, d)), rng.normal(size=(d, d))
        g, gt = a @ a.T + 0.5 * np.eye(d), b @ b.T + 0.5 * np.eye(d)
        limit = g @ np.linalg.solve(gt, g)
        scaled = [np.linalg.norm(finite_predictive_metric(g, gt, n) - n * n * limit) / n for n in (1e2, 1e3, 1e4)]
        # the residual over N stays at the size of g (exactly N g in exact arithmetic)
        worst_ratio = max(worst_ratio, max(scaled) / np.linalg.norm(g))
    ok = worst_ratio <= 2.0
    acceptance_log(8, ok, f"max over trials and N of |residual| / (N |g|) = {worst_ratio:.4f}")
    assert ok


def test_criterion_09_conventional(acceptance_log):
    rng = np.random.default_rng(SEED)
    pairs = [builtin_normal(NormalPairSpec([[1.0, 0.3], [0.3, 2.0]], [[1.0, 0.3], [0.3, 2.0]])),
             builtin_location_scale(LocationScalePairSpec("normal", "normal")),
             builtin_location_scale(LocationScalePairSpec("logistic", "logistic")),
             builtin_poisson(PoissonPairSpec((1.0, 1.0, 1.0)))]
    worst_cv, worst_gap = 0.0, 0.0
    for pair in pairs:
        assert pair.same_models
        low, high = default_box(pair)
        pts = probe_points(pair.chart, low, high, 30, seed=SEED)
        vol = volume_element_prior(pair)
        jeffreys = 0.5 * np.array([np.linalg.slogdet(pair.g(p))[1] for p in pts])
        ratio = np.exp(vol.log_density(pts) - jeffreys)
        worst_cv = max(worst_cv, np.std(ratio) / np.mean(ratio))
        for _ in range(5):
            prior = random_bump_prior(pair, rng, low, high)
            for th in pts[:10]:
                worst_gap = max(worst_gap, abs(conventional_risk_diff(pair, prior, th) - risk_diff_thm2(pair, prior, th)))
    ok = worst_cv <= 1e-10 and worst_gap <= 1e-8
    acceptance_log(9, ok, f"pi_P / Jeffreys CV = {worst_cv:.1e}; conventional vs Laplacian route gap {worst_gap:.1e}")
    assert ok


def test_criterion_10_determinism(acceptance_log, tmp_path):
    cfg = {"seed": SEED, "model": {"family": "location_scale"},
           "priors": [{"name": "right_invariant"}, {"name": "ckappa", "c": 0.5, "kappa": 1.0}, {"name": "volume"}],
           "sim": {"theta": [0.3, 1.5], "N": [10, 40], "replicates": 40}}
    path = tmp_path / "mc.json"
    path.write_text(json.dumps(cfg))
    outs = []
    for threads in (1, 8):
        out = tmp_path / f"t{threads}"
        code = main(["risk-mc", "--config", str(path), "--threads", str(threads), "--out", str(out)], io.StringIO())
        assert code == 0
        outs.append((out / "risk_mc.csv").read_bytes())
    ok = outs[0] == outs[1] and len(outs[0]) > 0
    acceptance_log(10, ok, f"risk_mc.csv byte-identical at --threads 1 and 8 ({len(outs[0])} bytes)")
    assert ok
