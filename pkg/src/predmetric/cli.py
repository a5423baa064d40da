"""Command-line harness.

Subcommands ``geom``, ``check``, ``figure1``, ``risk-asym`` and ``risk-mc``.
Exit codes: 0 success, 1 a check failed, 2 configuration error, 3
numerical error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checks import corrupt_pair, default_box, run_suite
from .config import (ExperimentConfig, build_chart, build_pair, build_priors, load_config)
from .errors import ConfigError, NumericalError, SpecError
from .geometry import connection_trace, laplace_beltrami
from .priors import probe_points
from .risk_asym import ckappa_risk_closed, closed_form_risk, risk_diff_thm1, risk_diff_thm2
from .simulate import SEED_SCHEME, asymptote_convergence

FIGURE1_FIXED = ("rho", "risk_piP", "risk_piR", "risk_piC")
RISK_MC_COLUMNS = ("N", "prior", "risk", "risk_se", "N_risk", "N_risk_se", "diff", "diff_se", "N2_diff",
                   "N2_diff_se", "asymptote", "leading_N_risk")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def fmt(x) -> str:
    """Numbers with 17 significant digits; everything else via str."""
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def _write_csv(header: Sequence[str], rows, path: Optional[Path], stream) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    text = buf.getvalue()
    if path is None:
        stream.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _emit(obj, stream, sink: Optional[list] = None) -> None:
    line = json.dumps(_jsonable(obj), sort_keys=True)
    stream.write(line + "\n")
    if sink is not None:
        sink.append(line)


def _out_dir(args, cfg: Optional[ExperimentConfig]) -> Optional[Path]:
    if args.out:
        return Path(args.out)
    if cfg is not None and cfg.out:
        return Path(cfg.out)
    return None


def _points(cfg: ExperimentConfig, pair, chart) -> np.ndarray:
    pr = cfg.probes
    low, high = default_box(pair)
    low = low if pr.low is None else np.asarray(pr.low, float)
    high = high if pr.high is None else np.asarray(pr.high, float)
    pts = np.asarray(pr.points, float).reshape(-1, pair.dim) if pr.points else None
    n = pr.n_random if (pr.n_random or pts is not None) else 10
    ref_pts = probe_points(pair.chart, low, high, n, seed=cfg.seed % 2 ** 32, points=pts)
    if chart is not pair.chart:
        return np.array([chart.from_ref(p) for p in ref_pts])
    return ref_pts


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------

def cmd_geom(cfg: ExperimentConfig, args, stream) -> int:
    pair = build_pair(cfg.model)
    priors = build_priors(pair, cfg.priors)
    if cfg.theta is None:
        raise ConfigError("geom needs 'theta'")
    theta = pair.chart.check(np.asarray(cfg.theta, float))
    g, gt, gp = pair.g(theta), pair.g_tilde(theta), pair.g_pred(theta)
    ge_trace = np.einsum("kjl,jl->k", pair.x_model.gamma_e(theta), np.linalg.inv(g))
    report = {
        "command": "geom", "family": pair.family, "theta": theta,
        "g": g, "g_tilde": gt, "g_pred": gp,
        "sqrt_det_g_pred": float(np.sqrt(np.linalg.det(gp))),
        "volume_element_log_density": float(pair.log_volume_element(theta)),
        "connection_traces": {
            "levi_civita_g": connection_trace(pair.metric_x, theta),
            "levi_civita_g_tilde": connection_trace(pair.metric_y, theta),
            "levi_civita_g_pred": connection_trace(pair.predictive_metric, theta),
            "e_connection_x": ge_trace,
        },
        "laplacian_of_ratio": {p.name: laplace_beltrami(pair.predictive_metric, p.ratio, theta) for p in priors},
    }
    lines = []
    _emit(report, stream, lines)
    out = _out_dir(args, cfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "geom.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


DEFAULT_SUITE = (
    {"family": "normal", "cov_x": [[1.0, 0.3, 0.0], [0.3, 2.0, 0.0], [0.0, 0.0, 0.5]],
     "cov_y": [[2.0, 0.0, 0.0], [0.0, 1.0, 0.2], [0.0, 0.2, 1.5]]},
    {"family": "normal", "cov_x": [[1.0]], "cov_y": [[1.0]]},
    {"family": "location_scale", "base_x": "normal", "base_y": "normal"},
    {"family": "location_scale", "base_x": {"name": "student_t", "df": 5.0}, "base_y": "logistic"},
    {"family": "poisson", "s": [0.5, 1.0, 2.0]},
    {"family": "poisson", "s": [1.0, 1.0, 1.0, 1.0]},
)


def cmd_check(cfg: Optional[ExperimentConfig], args, stream) -> int:
    from .config import ModelConfig

    seed = cfg.seed if cfg is not None else (args.seed if args.seed is not None else 0)
    if cfg is not None and cfg.model is not None:
        models = [cfg.model]
    else:
        models = [ModelConfig.from_dict(m) for m in DEFAULT_SUITE]
    chk = cfg.check if cfg is not None else None
    kw = {} if chk is None else {"n_points": chk.n_points, "n_priors": chk.n_priors, "n_datasets": chk.n_datasets}
    lines = []
    _emit({"command": "check", "seed": seed, "seed_scheme": "SeedSequence(seed, spawn_key=(0,)); Sobol probes"},
          stream, lines)
    ok = True
    for mc in models:
        pair = build_pair(mc)
        if chk is not None and chk.corrupt_metric:
            pair = corrupt_pair(pair, chk.corrupt_metric)
        for res in run_suite(pair, seed=seed, **kw):
            ok &= res.passed
            _emit({"model": pair.label, **res.to_dict()}, stream, lines)
    _emit({"summary": "pass" if ok else "fail"}, stream, lines)
    out = _out_dir(args, cfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "check.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK if ok else EXIT_CHECK


def figure1_table(b_ratio: float = 1.0, cs=(0.0, 1.0), kappa: float = 1.0, rho_max: float = 6.0, n_rho: int = 121):
    """Header and rows of the asymptotic-risk curves against the distance rho."""
    rho = np.linspace(0.0, rho_max, n_rho)
    cosh_r = np.cosh(rho)
    header = list(FIGURE1_FIXED) + [f"risk_c{c:g}_k{kappa:g}" for c in cs]
    rr = -0.5 * b_ratio
    cols = [rho, np.zeros_like(rho), np.full_like(rho, rr), np.full_like(rho, rr)]
    cols += [ckappa_risk_closed(b_ratio, c, cosh_r) for c in cs]
    return header, [list(r) for r in zip(*cols)]


def cmd_figure1(cfg: Optional[ExperimentConfig], args, stream) -> int:
    from .config import Figure1Config

    f = cfg.figure1 if cfg is not None else Figure1Config()
    if any(c < 0 for c in f.c) or f.kappa <= 0:
        raise ConfigError("figure1 needs c >= 0 and kappa > 0")
    header, rows = figure1_table(f.b_ratio, f.c, f.kappa, f.rho_max, f.n_rho)
    out = _out_dir(args, cfg)
    _write_csv(header, rows, None if out is None else out / "figure1.csv", stream)
    return EXIT_OK


def cmd_risk_asym(cfg: ExperimentConfig, args, stream) -> int:
    pair = build_pair(cfg.model)
    priors = build_priors(pair, cfg.priors)
    chart = build_chart(pair, cfg.chart)
    pts = _points(cfg, pair, chart)
    ref = build_priors(pair, ())[0]
    d = pair.dim
    header = ["point", "prior"] + [f"theta{i + 1}" for i in range(d)] + ["thm1", "thm2", "closed"]
    rows, worst = [], 0.0
    for k, p in enumerate(pts):
        theta_ref = chart.ref(p)
        for prior in priors:
            t2 = risk_diff_thm2(pair, prior, p, chart=chart)
            t1 = risk_diff_thm1(pair, prior, ref, theta_ref)
            worst = max(worst, abs(t1 - t2) / (1.0 + abs(t2)))
            rows.append([k, prior.name] + list(p) + [t1, t2, closed_form_risk(pair, prior, theta_ref)])
    out = _out_dir(args, cfg)
    if out is None:
        _write_csv(header, rows, None, stream)
    else:
        _write_csv(header, rows, out / "risk_asym.csv", stream)
    _emit({"command": "risk-asym", "family": pair.family, "chart": chart.name, "points": len(pts),
           "priors": [p.to_dict() for p in priors], "max_route_gap": worst}, sys.stderr if out is None else stream)
    return EXIT_OK


def cmd_risk_mc(cfg: ExperimentConfig, args, stream) -> int:
    pair = build_pair(cfg.model)
    priors = build_priors(pair, cfg.priors)
    sim = cfg.sim
    if sim is None:
        raise ConfigError("risk-mc needs a 'sim' section")
    header = {"command": "risk-mc", "seed": cfg.seed, "seed_scheme": SEED_SCHEME,
              "stream": "N (one stream per sample size)", "family": pair.family,
              "priors": [p.to_dict() for p in priors], "reference": priors[sim.reference].name,
              "replicates": sim.replicates, "threads": args.threads}
    lines = []
    _emit(header, stream, lines)
    reports = asymptote_convergence(pair, priors, np.asarray(sim.theta, float), sim.N, sim.replicates, cfg.seed,
                                    threads=args.threads, kl_scheme=sim.kl_scheme, kl_nodes=sim.kl_nodes,
                                    kl_draws=sim.kl_draws, predictive_method=sim.predictive_method,
                                    reference=sim.reference)
    rows = []
    for rep in reports:
        _emit(rep.to_dict(), stream, lines)
        rows += [[r[c] for c in RISK_MC_COLUMNS] for r in rep.rows()]
    out = _out_dir(args, cfg)
    if out is None:
        _write_csv(RISK_MC_COLUMNS, rows, None, stream)
    else:
        _write_csv(RISK_MC_COLUMNS, rows, out / "risk_mc.csv", stream)
        (out / "risk_mc.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


COMMANDS = {"geom": cmd_geom, "check": cmd_check, "figure1": cmd_figure1, "risk-asym": cmd_risk_asym,
            "risk-mc": cmd_risk_mc}
CONFIG_OPTIONAL = {"check", "figure1"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="predmetric", description="Predictive-metric priors and KL risk.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=name not in CONFIG_OPTIONAL, help="experiment JSON")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="worker threads")
        p.add_argument("--out", type=Path, help="output directory")
    return parser


def main(argv: Optional[Sequence[str]] = None, stream=None) -> int:
    stream = stream or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = load_config(args.config) if args.config is not None else None
        if cfg is not None and args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed must lie in [0, 2^64 - 1]")
            cfg.seed = args.seed
        return COMMANDS[args.command](cfg, args, stream)
    except (ConfigError, SpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
