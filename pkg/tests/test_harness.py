"""Config validation, run modes end to end at toy scale, persistence,
reproducibility, CLI exit codes, and run comparison."""

import json

import numpy as np
import pytest

from spectrisk.cli import main as cli_main
from spectrisk.harness import ConfigError, ExperimentConfig, report_diff, run

TOY_SYSTEM = {"family": "torus", "beta": 2.0, "M_max": 512}


def sweep_config(out, **overrides):
    raw = {
        "mode": "sweep",
        "system": dict(TOY_SYSTEM),
        "filter": {"family": "krr"},
        "source": {"s": 1.0, "style": "exact-powerlaw"},
        "sigma_sq": 1.0,
        "n_grid": [64, 128],
        "lambda_rule": {"mode": "n-linked", "a": 1.0, "theta": 0.6666666666666666},
        "seeds": [0, 1, 2],
        "out": str(out),
        "threads": 1,
    }
    raw.update(overrides)
    return ExperimentConfig.from_dict(raw)


class TestConfigValidation:
    def test_unknown_field_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            sweep_config(tmp_path, bogus=1)

    def test_bad_mode(self, tmp_path):
        with pytest.raises(ConfigError, match="mode"):
            sweep_config(tmp_path, mode="explode")

    def test_bad_beta(self, tmp_path):
        with pytest.raises(ConfigError, match="system.beta"):
            sweep_config(tmp_path, system={"family": "torus", "beta": 0.5, "M_max": 16})

    def test_empirical_mode_needs_seeds(self, tmp_path):
        with pytest.raises(ConfigError, match="seeds"):
            sweep_config(tmp_path, seeds=[])

    def test_descent_step_fraction_range(self, tmp_path):
        with pytest.raises(ConfigError, match="eta_frac"):
            sweep_config(tmp_path, filter={"family": "gradient_descent", "eta_frac": 0.8})

    def test_from_json_and_toml(self, tmp_path):
        cfg = sweep_config(tmp_path / "o")
        jpath = tmp_path / "cfg.json"
        jpath.write_text(json.dumps(cfg.to_dict()))
        assert ExperimentConfig.from_file(jpath).config_hash() == cfg.config_hash()
        tpath = tmp_path / "cfg.toml"
        tpath.write_text(
            "\n".join(
                [
                    'mode = "sweep"',
                    'out = "%s"' % (tmp_path / "o"),
                    "sigma_sq = 1.0",
                    "n_grid = [64, 128]",
                    "seeds = [0, 1, 2]",
                    "threads = 1",
                    "[system]",
                    'family = "torus"',
                    "beta = 2.0",
                    "M_max = 512",
                    "[filter]",
                    'family = "krr"',
                    "[source]",
                    "s = 1.0",
                    'style = "exact-powerlaw"',
                    "[lambda_rule]",
                    'mode = "n-linked"',
                    "a = 1.0",
                    "theta = 0.6666666666666666",
                ]
            )
        )
        assert ExperimentConfig.from_file(tpath).config_hash() == cfg.config_hash()


class TestSweepMode:
    def test_outputs_and_summary(self, tmp_path):
        cfg = sweep_config(tmp_path / "run")
        result = run(cfg)
        assert result.exit_code == 0
        rows_text = (tmp_path / "run" / "rows.csv").read_text()
        assert rows_text.startswith(f"# config_hash={cfg.config_hash()}")
        summary = json.loads((tmp_path / "run" / "summary.json").read_text())
        assert summary["config_hash"] == cfg.config_hash()
        for n in ("64", "128"):
            med = summary["per_n"][n]["median_ratio"]
            assert 0.3 < med < 3.0

    def test_bit_identical_reruns(self, tmp_path):
        cfg_a = sweep_config(tmp_path / "a")
        cfg_b = sweep_config(tmp_path / "b")
        run(cfg_a)
        run(cfg_b)
        assert (tmp_path / "a" / "rows.csv").read_bytes() == (
            tmp_path / "b" / "rows.csv"
        ).read_bytes()

    def test_threads_do_not_change_results(self, tmp_path):
        run(sweep_config(tmp_path / "t1", threads=1))
        run(sweep_config(tmp_path / "t2", threads=3))
        assert (tmp_path / "t1" / "rows.csv").read_bytes() == (
            tmp_path / "t2" / "rows.csv"
        ).read_bytes()

    def test_truncation_abort_is_invariant_failure(self, tmp_path):
        cfg = sweep_config(
            tmp_path / "r",
            system={"family": "torus", "beta": 2.0, "M_max": 24},
            n_grid=[4096],
        )
        result = run(cfg)
        assert result.exit_code == 1
        assert "error" in result.summary


class TestOtherModes:
    def test_curve_mode(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            {
                "mode": "curve",
                "system": dict(TOY_SYSTEM),
                "filter": {"family": "gradient_flow"},
                "source": {"s": 1.0},
                "n_grid": [128, 512],
                "lambda_rule": {"mode": "grid", "min": 1e-2, "max": 0.5, "points_per_decade": 16},
                "out": str(tmp_path / "curve"),
            }
        )
        result = run(cfg)
        assert result.exit_code == 0
        assert result.summary["verdicts"]["predicted_risk_quasiconvex"]
        lines = (tmp_path / "curve" / "curve.csv").read_text().splitlines()
        assert lines[0] == f"# config_hash={cfg.config_hash()}"
        assert lines[1] == "lambda,bias_sq,n,var_term,predicted_risk"

    def test_verify_filter_krr_measures_E_one(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            {
                "mode": "verify-filter",
                "system": dict(TOY_SYSTEM),
                "filter": {"family": "krr"},
                "out": str(tmp_path / "vf"),
            }
        )
        result = run(cfg)
        assert result.exit_code == 0
        assert result.summary["measured_E"] == pytest.approx(1.0, abs=1e-12)

    def test_verify_contour(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            {
                "mode": "verify-contour",
                "system": {"family": "torus", "beta": 2.0, "M_max": 64},
                "filter": {"family": "iterated_ridge", "p": 2.0},
                "lambda_rule": {"mode": "grid", "values": [1e-1, 1e-3]},
                "out": str(tmp_path / "vc"),
            }
        )
        result = run(cfg)
        assert result.exit_code == 0
        assert result.summary["verdicts"]["cross_check_ok"]
        assert max(result.summary["eig_vs_contour_rel_err"].values()) <= 1e-6

    def test_saturation_mode_and_diff(self, tmp_path):
        base = {
            "mode": "saturation",
            "system": dict(TOY_SYSTEM),
            "filter": {"family": "krr"},
            "filter_b": {"family": "gradient_flow"},
            "source": {"s": 4.0},
            "n_grid": [64, 128, 256],
            "lambda_rule": {"mode": "grid", "min": 3e-2, "max": 0.6, "points_per_decade": 10},
            "seeds": [0, 1, 2],
            "out": str(tmp_path / "sat"),
        }
        result = run(ExperimentConfig.from_dict(base))
        assert result.exit_code == 0
        assert "slope" in result.summary["slopes"]["a"]
        diff = report_diff(result.summary, result.summary)
        assert diff["slope_delta"] == 0.0
        for v in diff["per_n_median_ratio"].values() if "per_n_median_ratio" in diff else []:
            assert v == 1.0

    def test_interpolating_mode(self, tmp_path):
        cfg = ExperimentConfig.from_dict(
            {
                "mode": "interpolating",
                "system": {"family": "torus", "beta": 2.0, "M_max": 1500},
                "filter": {"family": "krr"},
                "source": {"s": 1.0},
                "n_grid": [64, 128],
                "seeds": [0, 1],
                "out": str(tmp_path / "interp"),
            }
        )
        result = run(cfg)
        assert result.exit_code == 0
        assert result.summary["floor"] > 0.0

    def test_saturation_requires_second_filter(self, tmp_path):
        with pytest.raises(ConfigError, match="filter_b"):
            ExperimentConfig.from_dict(
                {
                    "mode": "saturation",
                    "system": dict(TOY_SYSTEM),
                    "filter": {"family": "krr"},
                    "source": {"s": 4.0},
                    "n_grid": [64],
                    "seeds": [0],
                    "out": str(tmp_path / "sat2"),
                }
            )


class TestReportDiff:
    def test_identical_runs_zero_delta(self, tmp_path):
        result = run(sweep_config(tmp_path / "d"))
        diff = report_diff(
            tmp_path / "d" / "summary.json", tmp_path / "d" / "summary.json"
        )
        assert all(v == 0.0 for v in diff["per_n_median_delta"].values())
        assert all(v == 1.0 for v in diff["per_n_median_ratio"].values())

    def test_schema_mismatch(self):
        with pytest.raises(ConfigError):
            report_diff({"mode": "curve"}, {"mode": "verify-filter"})


class TestCli:
    def test_cli_sweep_roundtrip(self, tmp_path, capsys):
        cfg = sweep_config(tmp_path / "cli")
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_dict()))
        code = cli_main(["sweep", str(path), "--out", str(tmp_path / "cli")])
        assert code == 0
        out = capsys.readouterr().out
        assert "summary" in out

    def test_cli_config_error_exit_two(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"mode": "sweep", "system": {"family": "klein-bottle"}}))
        assert cli_main(["sweep", str(path)]) == 2

    def test_cli_missing_file_exit_two(self, tmp_path):
        assert cli_main(["curve", str(tmp_path / "absent.json")]) == 2

    def test_cli_diff(self, tmp_path, capsys):
        result = run(sweep_config(tmp_path / "x"))
        code = cli_main(
            ["diff", str(tmp_path / "x" / "summary.json"), str(tmp_path / "x" / "summary.json")]
        )
        assert code == 0
        assert "per_n_median_ratio" in capsys.readouterr().out
