"""Configuration parsing and the command-line interface."""
import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from predmetric.cli import RISK_MC_COLUMNS, figure1_table, main
from predmetric.config import ExperimentConfig, build_chart, build_pair, load_config
from predmetric.errors import ConfigError


def write(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


def run(argv):
    buf = io.StringIO()
    code = main(argv, buf)
    return code, buf.getvalue()


LS_CFG = {"seed": 11, "model": {"family": "location_scale"},
          "priors": [{"name": "right_invariant"}, {"name": "volume"}], "theta": [0.0, 1.0],
          "probes": {"n_random": 3}, "sim": {"theta": [0.0, 1.0], "N": [20, 40], "replicates": 40}}


class TestConfig:
    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2 ** 64 - 1),
           theta=st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=2),
           reps=st.integers(2, 10 ** 5),
           ns=st.lists(st.integers(1, 1000), min_size=1, max_size=4),
           c=st.floats(0, 1))
    def test_round_trip(self, seed, theta, reps, ns, c):
        data = {"seed": seed, "model": {"family": "location_scale", "base_x": {"name": "student_t", "df": 4.0}},
                "priors": [{"name": "ckappa", "c": c, "kappa": 1.0}], "theta": theta,
                "sim": {"theta": theta, "N": ns, "replicates": reps}}
        cfg = ExperimentConfig.from_dict(data)
        again = ExperimentConfig.from_dict(json.loads(cfg.to_json()))
        assert again == cfg

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"seed": 1, "bogus": 2})

    def test_missing_seed(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"model": {"family": "normal", "cov_x": [[1.0]]}})

    @pytest.mark.parametrize("seed", [-1, 2 ** 64, 1.5, "7", True])
    def test_bad_seed(self, seed):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"seed": seed})

    def test_family_keys(self):
        cfg = ExperimentConfig.from_dict({"seed": 0, "model": {"family": "poisson", "cov_x": [[1.0]]}})
        with pytest.raises(ConfigError):
            build_pair(cfg.model)

    def test_chart_availability(self):
        cfg = ExperimentConfig.from_dict({"seed": 0, "model": {"family": "poisson", "s": [1.0, 2.0]}})
        pair = build_pair(cfg.model)
        assert build_chart(pair, "xi").name != pair.chart.name
        with pytest.raises(ConfigError):
            build_chart(pair, "upper-half-plane")

    def test_load_errors(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(bad)
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.json")


class TestCommands:
    def test_exit_code_config(self, tmp_path):
        assert run(["geom", "--config", write(tmp_path, {"seed": 1, "bogus": 2})])[0] == 2

    def test_exit_code_numeric(self, tmp_path):
        cfg = {**LS_CFG, "probes": {"points": [[0.0, -1.0]]}}
        assert run(["risk-asym", "--config", write(tmp_path, cfg)])[0] == 3

    def test_geom_poisson(self, tmp_path):
        cfg = {"seed": 0, "model": {"family": "poisson", "s": [0.1, 0.2]}, "theta": [1.0, 1.0]}
        code, out = run(["geom", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")])
        assert code == 0
        rep = json.loads(out)
        np.testing.assert_allclose(rep["g_pred"], [[10.0, 0.0], [0.0, 5.0]])
        assert (tmp_path / "o" / "geom.jsonl").exists()

    def test_geom_normal_flat(self, tmp_path):
        cfg = {"seed": 0, "model": {"family": "normal", "cov_x": [[1.0, 0.2], [0.2, 1.0]], "cov_y": [[2.0, 0], [0, 1]]},
               "theta": [0.3, 0.1]}
        rep = json.loads(run(["geom", "--config", write(tmp_path, cfg)])[1])
        for v in rep["connection_traces"].values():
            np.testing.assert_allclose(v, 0.0, atol=1e-12)

    def test_figure1_row0(self):
        code, out = run(["figure1"])
        assert code == 0
        rows = list(csv.reader(io.StringIO(out)))
        assert rows[0] == ["rho", "risk_piP", "risk_piR", "risk_piC", "risk_c0_k1", "risk_c1_k1"]
        assert [float(v) for v in rows[1]] == [0.0, 0.0, -0.5, -0.5, -2.0, -1.0]

    def test_figure1_far(self):
        _, rows = figure1_table(rho_max=40.0, n_rho=3)
        assert rows[-1][-2] == pytest.approx(-0.5, abs=1e-12)

    def test_risk_asym(self, tmp_path):
        code, out = run(["risk-asym", "--config", write(tmp_path, LS_CFG), "--out", str(tmp_path / "o")])
        assert code == 0
        rows = list(csv.DictReader(open(tmp_path / "o" / "risk_asym.csv")))
        assert list(rows[0]) == ["point", "prior", "theta1", "theta2", "thm1", "thm2", "closed"]
        for r in rows:
            assert float(r["thm1"]) == pytest.approx(float(r["thm2"]), abs=1e-5)
            assert float(r["thm2"]) == pytest.approx(float(r["closed"]), abs=1e-8)
        assert json.loads(out)["max_route_gap"] < 1e-5

    def test_risk_mc(self, tmp_path):
        code, _ = run(["risk-mc", "--config", write(tmp_path, LS_CFG), "--out", str(tmp_path / "o")])
        assert code == 0
        rows = list(csv.reader(open(tmp_path / "o" / "risk_mc.csv")))
        assert rows[0] == list(RISK_MC_COLUMNS)
        assert len(rows) == 1 + 2 * 2
        assert {float(r[RISK_MC_COLUMNS.index("asymptote")]) for r in rows[1:] if r[1] == "volume"} == {0.0}

    def test_seed_override(self, tmp_path):
        path = write(tmp_path, LS_CFG)
        run(["risk-mc", "--config", path, "--out", str(tmp_path / "a"), "--seed", "5"])
        run(["risk-mc", "--config", path, "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "risk_mc.csv").read_bytes() != (tmp_path / "b" / "risk_mc.csv").read_bytes()

    def test_check_negative_control(self, tmp_path):
        cfg = {"seed": 1, "model": {"family": "normal", "cov_x": [[1, 0], [0, 2]], "cov_y": [[1, 0], [0, 1]]},
               "check": {"corrupt_metric": 0.1, "n_datasets": 1, "n_points": 4, "n_priors": 2}}
        code, out = run(["check", "--config", write(tmp_path, cfg)])
        assert code == 1
        duality = [json.loads(line) for line in out.splitlines() if '"duality"' in line]
        assert duality and not duality[0]["pass"]

    def test_check_conventional_config(self, tmp_path):
        cfg = {"seed": 2, "model": {"family": "location_scale"},
               "check": {"n_datasets": 1, "n_points": 4, "n_priors": 2}}
        code, out = run(["check", "--config", write(tmp_path, cfg)])
        names = [json.loads(line).get("check") for line in out.splitlines()]
        assert code == 0
        assert "conventional_risk" in names and "jeffreys_reduction" in names

    def test_default_suite_passes(self):
        code, out = run(["check", "--seed", "3"])
        assert code == 0
        assert json.loads(out.splitlines()[-1]) == {"summary": "pass"}

    def test_shipped_configs_parse(self):
        from pathlib import Path
        paths = sorted((Path(__file__).resolve().parent.parent / "configs").glob("*.json"))
        assert paths
        for path in paths:
            cfg = load_config(path)
            if cfg.model is not None:
                build_pair(cfg.model)

    def test_threads_validated(self, tmp_path):
        assert run(["risk-mc", "--config", write(tmp_path, LS_CFG), "--threads", "0"])[0] == 2
