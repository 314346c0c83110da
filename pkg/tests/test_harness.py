from __future__ import annotations

import csv
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from avgpg import agent
from avgpg.harness import (
    RUNS_COLUMNS,
    SUMMARY_COLUMNS,
    ExperimentConfig,
    FitError,
    c_H_for_min_epochs,
    estimator_diagnostic,
    fit_slope,
    load_mdp_source,
    probe_thetas,
    resolve,
    sweep,
)
from avgpg.mdp import constant_reward_mdp, save_mdp
from avgpg.policy import tabular_policy

SMALL = {
    "mdp_source": "two_state",
    "T_grid": [2**10, 2**11, 2**12],
    "seeds": [0, 1, 2],
    "alpha": 0.5,
    "c_H": 0.001,
    "c_N": 0.25,
    "n_probes": 4,
}


class TestFitSlope:
    def test_exact_power_law(self):
        pts = [(2.0**k, 3.0 * (2.0**k) ** 0.75) for k in range(10, 16)]
        slope, intercept, half = fit_slope(pts)
        assert slope == pytest.approx(0.75, abs=1e-12)
        assert intercept == pytest.approx(np.log2(3.0), abs=1e-12)
        assert half < 1e-12

    def test_constant_is_flat(self):
        assert fit_slope([(1, 5.0), (2, 5.0), (8, 5.0)])[0] == pytest.approx(0.0, abs=1e-15)

    def test_linear_case(self):
        slope, intercept, _ = fit_slope([(x, 2.0 * x) for x in (1, 3, 10, 30)])
        assert slope == pytest.approx(1.0, abs=1e-12) and intercept == pytest.approx(1.0, abs=1e-12)

    def test_nonpositive_y_names_point(self):
        with pytest.raises(FitError, match="nonpositive y at point 1"):
            fit_slope([(1, 1.0), (2, 0.0), (4, 3.0)])

    def test_needs_three_distinct_points(self):
        with pytest.raises(FitError, match="at least 3"):
            fit_slope([(1, 1.0), (2, 2.0)])
        with pytest.raises(FitError, match="distinct"):
            fit_slope([(1, 1.0), (1, 2.0), (4, 3.0)])

    def test_half_width_is_scaled_standard_error(self):
        pts = [(1, 1.0), (2, 2.5), (4, 3.5), (8, 9.0)]
        slope, intercept, half = fit_slope(pts)
        x, y = np.log2([p[0] for p in pts]), np.log2([p[1] for p in pts])
        coef, cov = np.polyfit(x, y, 1, cov="unscaled")
        resid = y - np.polyval(coef, x)
        se = np.sqrt(cov[0, 0] * (resid @ resid) / (len(x) - 2))
        assert slope == pytest.approx(coef[0], rel=1e-12)
        assert half == pytest.approx(1.96 * se, rel=1e-9)

    @given(
        exponent=st.floats(-3, 3),
        prefactor=st.floats(1e-3, 1e3),
        ks=st.lists(st.integers(0, 30), min_size=3, max_size=8, unique=True),
    )
    def test_recovers_synthetic_exponents(self, exponent, prefactor, ks):
        pts = [(2.0**k, prefactor * 2.0 ** (k * exponent)) for k in ks]
        assert fit_slope(pts)[0] == pytest.approx(exponent, abs=1e-12)


class TestConfig:
    def test_aliases_and_round_trip(self, tmp_path):
        cfg = ExperimentConfig.from_dict({"T": 4096, "seed": 3, "alpha": 0.1})
        assert cfg.T_grid == [4096] and cfg.seeds == [3]
        (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
        assert ExperimentConfig.load(tmp_path / "c.json") == cfg

    @pytest.mark.parametrize(
        "doc, match",
        [
            ({"T_grid": [8, 4]}, "strictly increasing"),
            ({"seeds": []}, "nonempty"),
            ({"alpha": "fast"}, "auto"),
            ({"bogus": 1}, "unknown"),
        ],
    )
    def test_rejections(self, doc, match):
        with pytest.raises(ValueError, match=match):
            ExperimentConfig.from_dict(doc)

    def test_sources(self, tmp_path):
        mdp, feats = load_mdp_source("two_state")
        assert mdp.n_states == 2 and feats is None
        gen, _ = load_mdp_source({"generator": {"n_states": 5, "n_actions": 3, "seed": 2}})
        assert gen.rewards.shape == (5, 3)
        spec = {"n_states": 3, "n_actions": 2, "constant_reward": 0.5}
        const, _ = load_mdp_source({"generator": spec})
        assert np.all(const.rewards == 0.5)
        save_mdp(gen, tmp_path / "g.json", features=np.ones((5, 3, 2)))
        loaded, feats = load_mdp_source("g.json", tmp_path)
        assert np.array_equal(loaded.transitions, gen.transitions) and feats.shape == (5, 3, 2)
        assert load_mdp_source({"path": "g.json"}, tmp_path)[0].n_states == 5
        with pytest.raises(ValueError):
            load_mdp_source({"nope": 1})


class TestResolution:
    def test_probes_start_at_zero_and_are_seeded(self):
        pol = tabular_policy(2, 2)
        a, b = probe_thetas(pol, 3, 1.0, 7), probe_thetas(pol, 3, 1.0, 7)
        assert len(a) == 4 and np.array_equal(a[0], np.zeros(4))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    @pytest.mark.parametrize("T, t_mix, t_hit", [(2**16, 2, 3.145), (2**14, 1, 16.0), (2**20, 3, 5.0)])
    def test_min_epochs_c_H_is_nearly_largest(self, T, t_mix, t_hit):
        c = c_H_for_min_epochs(T, t_mix, t_hit, 50, c_N=0.1)
        assert agent.make_schedule(T, t_mix, t_hit, c, 0.1).K >= 50
        assert agent.make_schedule(T, t_mix, t_hit, c * 1.02, 0.1).K < 50

    def test_resolved_constants(self):
        res = resolve(ExperimentConfig.from_dict({**SMALL, "alpha": "auto", "min_epochs": 5}))
        assert res.J_star == pytest.approx(8 / 9)
        assert res.t_mix >= 1 and res.t_hit >= 2.0
        assert 0 < res.alpha < float("inf")
        assert agent.make_schedule(2**10, res.t_mix, res.t_hit, res.c_H, 0.25).K >= 5

    def test_overrides(self):
        res = resolve(ExperimentConfig.from_dict({**SMALL, "t_mix": 7, "t_hit": 11.5}))
        assert (res.t_mix, res.t_hit) == (7, 11.5)


class TestSweep:
    def test_artifacts_and_schema(self, tmp_path):
        summary = sweep(ExperimentConfig.from_dict({**SMALL, "output_dir": str(tmp_path)}))
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["config.json", "fits.json", "runs.csv", "summary.csv"]
        with open(tmp_path / "runs.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == RUNS_COLUMNS and len(rows) == 1 + 9
        with open(tmp_path / "summary.csv", newline="") as fh:
            assert next(csv.reader(fh)) == SUMMARY_COLUMNS
        # floats carry 17 significant digits
        regret = rows[1][RUNS_COLUMNS.index("regret")]
        assert float(regret) == summary.runs[0]["regret"]
        assert regret == format(summary.runs[0]["regret"], ".17g")
        fits = json.loads((tmp_path / "fits.json").read_text())
        assert set(fits) >= {"regret_slope", "gap_slope", "grad_err_slope", "estimator_mse_slope"}
        assert fits["regret_slope"]["n_points"] == 3 and fits["n_seeds"] == 3
        assert len(summary.logs) == 9

    def test_same_config_byte_identical(self, tmp_path):
        cfg = {**SMALL, "output_dir": str(tmp_path)}
        names = ("config.json", "runs.csv", "summary.csv", "fits.json")
        sweep(ExperimentConfig.from_dict(cfg))
        first = {f: (tmp_path / f).read_bytes() for f in names}
        sweep(ExperimentConfig.from_dict(cfg))
        assert {f: (tmp_path / f).read_bytes() for f in names} == first

    def test_worker_pool_matches_serial(self, tmp_path):
        serial = sweep(ExperimentConfig.from_dict({**SMALL, "seeds": [0, 1]}))
        pooled = sweep(ExperimentConfig.from_dict({**SMALL, "seeds": [0, 1], "workers": 2}))
        assert serial.runs == pooled.runs

    def test_constant_reward_sweep(self):
        cfg = {**SMALL, "mdp_source": {"generator": {"n_states": 3, "n_actions": 2, "constant_reward": 0.5}}}
        summary = sweep(ExperimentConfig.from_dict(cfg))
        assert all(r["regret"] == 0.0 for r in summary.runs)
        assert "nonpositive y" in summary.fits["regret_slope"]["error"]

    def test_failed_run_names_the_cell(self, monkeypatch):
        def boom(*args, **kwargs):
            raise FloatingPointError("diverged")

        monkeypatch.setattr(agent, "run", boom)
        with pytest.raises(RuntimeError, match=r"T=1024, seed=0"):
            sweep(ExperimentConfig.from_dict(SMALL))


class TestEstimatorDiagnostic:
    def test_rejects_few_repeats(self, two_state, uniform_two_state):
        with pytest.raises(ValueError, match="100"):
            estimator_diagnostic(two_state, uniform_two_state, 0, 0, [256, 512, 1024], repeats=99)

    def test_rejects_bad_query(self, two_state, uniform_two_state):
        with pytest.raises(ValueError):
            estimator_diagnostic(two_state, uniform_two_state, 2, 0, [256, 512, 1024], repeats=100)

    def test_single_action_constant_reward_is_exact(self):
        mdp = constant_reward_mdp(3, 1, 0.5)
        diag = estimator_diagnostic(mdp, tabular_policy(3, 1), 0, 0, [64, 128, 256], repeats=100, N=4)
        assert all(r["mse"] < 1e-20 for r in diag.rows)
        assert diag.slope is None and "nonpositive y" in diag.fit_error

    def test_table_shape(self, two_state, uniform_two_state):
        diag = estimator_diagnostic(two_state, uniform_two_state, 0, 1, [256, 512, 1024], repeats=100, seed=3)
        assert [r["H"] for r in diag.rows] == [256, 512, 1024]
        assert diag.N == 40
        assert all(r["mse"] > 0 and r["mse_se"] > 0 for r in diag.rows)
        assert diag.rows[0]["mean_visits"] < diag.rows[-1]["mean_visits"]
