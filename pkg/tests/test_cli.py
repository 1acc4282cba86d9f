import json
import warnings

import pytest

from marginalfair.cli import main
from marginalfair.pipeline import RunConfig, generate_synthetic_portfolio


def write_config(tmp_path, **overrides):
    defaults = dict(
        grid_lo=-1.0, grid_hi=1.0, grid_step=1.0, mc_draws=4000,
        n_rows=4000, quantile_iters=400, min_exceedances=20, seed=5,
    )
    defaults.update(overrides)
    config = RunConfig(**defaults)
    path = tmp_path / "config.json"
    config.to_json(path)
    return path, config


class TestSimulateCommand:
    def test_exit_zero_and_outputs(self, tmp_path, capsys):
        cfg, config = write_config(tmp_path)
        rc = main(["--config", str(cfg), "--out", str(tmp_path / "out"), "simulate"])
        assert rc == 0
        tag = config.config_hash()
        assert (tmp_path / "out" / f"decisions_{tag}.csv").exists()
        assert (tmp_path / "out" / f"config_{tag}.json").exists()

    def test_seed_override_changes_hash(self, tmp_path):
        cfg, config = write_config(tmp_path)
        rc = main(["--config", str(cfg), "--seed", "9",
                   "--out", str(tmp_path / "out"), "simulate"])
        assert rc == 0
        assert not list((tmp_path / "out").glob(f"*{config.config_hash()}*"))


class TestGenerateCommand:
    def test_writes_portfolio_and_truth(self, tmp_path):
        cfg, config = write_config(tmp_path)
        rc = main(["--config", str(cfg), "--out", str(tmp_path / "out"),
                   "generate", "--rows", "300"])
        assert rc == 0
        assert (tmp_path / "out" / "portfolio_5_300.csv").exists()
        assert (tmp_path / "out" / "portfolio_5_300_truth.json").exists()


class TestAuditCommand:
    def test_audit_on_csv(self, tmp_path):
        cfg, config = write_config(tmp_path)
        csv_path, _ = generate_synthetic_portfolio(5, 4000, out_dir=tmp_path / "data")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rc = main(["--config", str(cfg), "--out", str(tmp_path / "out"),
                       "audit", "--data", str(csv_path)])
        assert rc == 0
        report = tmp_path / "out" / f"audit_report_{config.config_hash()}.json"
        assert report.exists()
        doc = json.loads(report.read_text())
        assert set(doc["gini_indices"]) == {"unaware", "discrimination_free", "fair_ev"}

    def test_schema_mismatch_is_validation_error(self, tmp_path, capsys):
        cfg, _ = write_config(tmp_path)
        bad = tmp_path / "bad.csv"
        bad.write_text("Gender,Age\nMale,30\n")
        rc = main(["--config", str(cfg), "--out", str(tmp_path / "out"),
                   "audit", "--data", str(bad)])
        assert rc == 2
        assert "validation error" in capsys.readouterr().err


class TestSensitivityCommand:
    def test_ev_marginal(self, tmp_path):
        cfg, config = write_config(tmp_path)
        rc = main(["--config", str(cfg), "--out", str(tmp_path / "out"),
                   "sensitivity", "--rho", "ev", "--variant", "marginal"])
        assert rc == 0
        tag = config.config_hash()
        csv_path = tmp_path / "out" / f"sensitivity_marginal_ev_{tag}.csv"
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "x,value,se,method"
        assert len(lines) == 4  # three grid points

    def test_es_level_parsing(self, tmp_path):
        cfg, config = write_config(tmp_path)
        rc = main(["--config", str(cfg), "--out", str(tmp_path / "out"),
                   "sensitivity", "--rho", "es:0.9", "--variant", "cascade"])
        assert rc == 0
        tag = config.config_hash()
        assert (tmp_path / "out" / f"sensitivity_cascade_es0.9_{tag}.json").exists()

    def test_bad_rho_is_validation_error(self, tmp_path, capsys):
        cfg, _ = write_config(tmp_path)
        rc = main(["--config", str(cfg), "--out", str(tmp_path / "out"),
                   "sensitivity", "--rho", "var:0.5"])
        assert rc == 2


class TestReportCommand:
    def test_prints_summary(self, tmp_path, capsys):
        cfg, config = write_config(tmp_path)
        frame, _ = generate_synthetic_portfolio(5, 4000)
        from marginalfair.pipeline import audit

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            audit(config, frame, out_dir=tmp_path / "run")
        rc = main(["report", "--run", str(tmp_path / "run")])
        out = capsys.readouterr().out
        assert rc == 0
        assert "decision summary" in out
        assert "gini indices" in out

    def test_missing_run_is_validation_error(self, tmp_path):
        rc = main(["report", "--run", str(tmp_path / "nope")])
        assert rc == 2


class TestConfigErrors:
    def test_broken_config_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json")
        rc = main(["--config", str(path), "--out", str(tmp_path), "simulate"])
        assert rc == 2
