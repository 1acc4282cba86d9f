import json
import warnings

import numpy as np
import pytest

from marginalfair.errors import InvalidInput, MergedBinsWarning
from marginalfair.pipeline import (
    AuditReport,
    RunConfig,
    audit,
    generate_synthetic_portfolio,
    gini,
    load_portfolio,
    quantile_bins,
    simulate,
)

SMALL_CONFIG = RunConfig(
    grid_lo=-1.0, grid_hi=1.0, grid_step=0.5, mc_draws=20_000,
    n_rows=6000, quantile_iters=600, min_exceedances=30, seed=99,
)


@pytest.fixture(scope="module")
def small_portfolio():
    frame, truth = generate_synthetic_portfolio(11, 6000)
    return frame, truth


@pytest.fixture(scope="module")
def small_audit(small_portfolio, tmp_path_factory):
    frame, _ = small_portfolio
    out = tmp_path_factory.mktemp("audit")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = audit(SMALL_CONFIG, frame, out_dir=out)
    return report, out


class TestRunConfig:
    def test_grid_row_count(self):
        config = RunConfig()
        assert config.grid().size == 61

    def test_json_roundtrip(self, tmp_path):
        config = RunConfig(seed=5, tau=0.3)
        path = tmp_path / "config.json"
        config.to_json(path)
        back = RunConfig.from_json(path)
        assert back == config
        assert back.config_hash() == config.config_hash()

    def test_unknown_fields_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"version": 1, "bogus": 3}))
        with pytest.raises(InvalidInput):
            RunConfig.from_json(path)

    def test_hash_changes_with_seed(self):
        assert RunConfig(seed=1).config_hash() != RunConfig(seed=2).config_hash()


@pytest.fixture(scope="module")
def simulate_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    return simulate(SMALL_CONFIG, out)


class TestSimulate:

    def test_emits_grid_rows(self, simulate_run):
        lines = simulate_run["decisions"].read_text().splitlines()
        assert len(lines) == 1 + 5  # header + grid points

    def test_adjustment_is_one_when_conditional_mean_vanishes(self):
        config = RunConfig(grid_lo=-3.0, grid_hi=-3.0, grid_step=1.0, mc_draws=4000)
        import tempfile

        with tempfile.TemporaryDirectory() as out:
            paths = simulate(config, out)
            lines = paths["adjustment"].read_text().splitlines()
            row = lines[1].split(",")
            assert float(row[1]) == pytest.approx(1.0, abs=1e-12)

    def test_cascade_minus_marginal_identity(self, simulate_run):
        lines = simulate_run["sensitivities"].read_text().splitlines()[1:]
        for line in lines:
            vals = [float(v) for v in line.split(",")]
            x, s_marg, s_casc = vals[0], vals[1], vals[4]
            assert s_casc - s_marg == pytest.approx(2.0 * 0.25 * (3.0 + x), abs=1e-6)

    def test_analytic_close_to_mc(self, simulate_run):
        # the 2-se agreement at production draw counts is covered by the
        # acceptance suite; at this reduced size allow 4 se
        for key in ("decisions", "sensitivities", "fair_rules"):
            lines = simulate_run[key].read_text().splitlines()
            header = lines[0].split(",")
            for line in lines[1:]:
                vals = dict(zip(header, [float(v) for v in line.split(",")]))
                for name in header[1::3]:
                    mc = vals[name + "_mc"]
                    se = vals[name + "_se"]
                    assert abs(vals[name] - mc) <= max(4 * se, 1e-9), (key, name)

    def test_byte_identical_reruns(self, tmp_path):
        a = simulate(SMALL_CONFIG, tmp_path / "a")
        b = simulate(SMALL_CONFIG, tmp_path / "b")
        for key in a:
            assert a[key].read_bytes() == b[key].read_bytes()

    def test_production_scale_analytic_mc_agreement(self, tmp_path):
        # at the default draw count the analytic and MC columns agree within
        # Monte Carlo noise: ~95% of comparisons inside 2 se (an exact
        # every-point 2-se gate would fail ~5% of points by construction)
        # and none far outside
        config = RunConfig(grid_lo=-3.0, grid_hi=3.0, grid_step=0.5, seed=11)
        paths = simulate(config, tmp_path)
        within = []
        worst = 0.0
        for key in ("decisions", "adjustment", "fair_rules", "sensitivities"):
            lines = paths[key].read_text().splitlines()
            header = lines[0].split(",")
            bases = [h for h in header if h != "x" and not h.endswith(("_mc", "_se"))]
            for line in lines[1:]:
                vals = dict(zip(header, [float(v) for v in line.split(",")]))
                for b in bases:
                    ratio = abs(vals[b] - vals[b + "_mc"]) / max(2 * vals[b + "_se"], 1e-12)
                    within.append(ratio <= 1.0)
                    worst = max(worst, ratio)
        assert np.mean(within) >= 0.90
        assert worst <= 2.5


class TestGenerate:
    def test_rejects_empty(self):
        with pytest.raises(InvalidInput):
            generate_synthetic_portfolio(0, 0)

    def test_fixed_seed_byte_identical(self, tmp_path):
        p1, _ = generate_synthetic_portfolio(3, 500, out_dir=tmp_path / "a")
        p2, _ = generate_synthetic_portfolio(3, 500, out_dir=tmp_path / "b")
        assert p1.read_bytes() == p2.read_bytes()

    def test_schema_columns(self, small_portfolio):
        frame, _ = small_portfolio
        from marginalfair.pipeline import PORTFOLIO_COLUMNS

        assert tuple(frame.columns) == PORTFOLIO_COLUMNS

    def test_truth_document(self, small_portfolio):
        _, truth = small_portfolio
        assert truth["pure_premium_coefficients"]["Gender=Female"] == -0.35
        assert "pure_premium_intercept" in truth

    def test_load_rejects_missing_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("Gender,Age\nMale,30\n")
        with pytest.raises(InvalidInput):
            load_portfolio(path)


class TestGini:
    def test_identical_predictions_exactly_zero(self):
        rng = np.random.default_rng(0)
        obs = rng.exponential(size=50)
        index, curve = gini(np.ones(50), obs, np.ones(50))
        assert index == 0.0

    def test_hand_enumerated_instance(self):
        # ten rows, uniform exposure, losses concentrated in the last row;
        # perfect ranking: Lorenz is flat until the last decile
        pred = np.arange(10, dtype=float)
        obs = np.zeros(10)
        obs[-1] = 5.0
        index, _ = gini(pred, obs, np.ones(10))
        # area under curve = 0.5 * 0.1 * 1 (last trapezoid) => 2*(0.5-0.05)
        assert index == pytest.approx(0.9, abs=1e-12)

    def test_reversal_flips_sign(self):
        rng = np.random.default_rng(1)
        pred = rng.random(40)
        obs = rng.exponential(size=40)
        expo = rng.uniform(0.5, 1.5, 40)
        plus, _ = gini(pred, obs, expo)
        minus, _ = gini(-pred, obs, expo)
        assert minus == pytest.approx(-plus, abs=1e-12)

    def test_bounded(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            pred = rng.random(30)
            obs = rng.exponential(size=30)
            index, _ = gini(pred, obs, np.ones(30))
            assert -1.0 <= index <= 1.0

    def test_zero_loss_undefined(self):
        with pytest.raises(InvalidInput):
            gini(np.arange(5.0), np.zeros(5), np.ones(5))


class TestQuantileBins:
    def test_perfectly_calibrated(self):
        rng = np.random.default_rng(3)
        pred = rng.uniform(1, 5, 200)
        table = quantile_bins(pred, pred, np.ones(200), n_bins=10)
        for row in table:
            assert row["mean_predicted"] == pytest.approx(row["mean_observed"], abs=1e-12)

    def test_equal_exposure_split(self):
        pred = np.arange(100, dtype=float)
        table = quantile_bins(pred, pred, np.ones(100), n_bins=10)
        assert len(table) == 10
        for row in table:
            assert row["exposure_share"] == pytest.approx(0.1, abs=0.011)

    def test_predicted_column_nondecreasing(self):
        rng = np.random.default_rng(4)
        pred = rng.exponential(size=500)
        obs = pred * rng.uniform(0.5, 1.5, 500)
        table = quantile_bins(pred, obs, rng.uniform(0.2, 1.0, 500), n_bins=8)
        means = [row["mean_predicted"] for row in table]
        assert all(b >= a for a, b in zip(means, means[1:]))

    def test_merged_bins_warning(self):
        with pytest.warns(MergedBinsWarning):
            quantile_bins(np.array([1.0, 1.0, 2.0, 2.0]), np.ones(4), np.ones(4), n_bins=4)

    def test_min_bins(self):
        with pytest.raises(InvalidInput):
            quantile_bins(np.arange(5.0), np.ones(5), np.ones(5), n_bins=1)


class TestAudit:
    def test_adjustments_positive(self, small_audit):
        report, out = small_audit
        tag = report.config_hash
        lines = (out / f"decisions_{tag}.csv").read_text().splitlines()
        header = lines[0].split(",")
        idx = header.index("adjustment")
        adjustments = np.array([float(line.split(",")[idx]) for line in lines[1:]])
        assert np.mean(adjustments > 0) >= 0.95

    def test_gini_spread_small(self, small_audit):
        report, _ = small_audit
        values = list(report.gini_indices.values())
        assert max(values) - min(values) <= 0.02

    def test_quantile_tables_monotone(self, small_audit):
        report, _ = small_audit
        for table in report.quantile_tables.values():
            means = [row["mean_predicted"] for row in table]
            assert all(b >= a - 1e-9 for a, b in zip(means, means[1:]))

    def test_summaries_nondecreasing(self, small_audit):
        report, _ = small_audit
        for summary in report.decision_summary.values():
            vals = [summary[k] for k in ("min", "q25", "q50", "q75", "max")]
            assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_age_groups_present(self, small_audit):
        report, _ = small_audit
        assert len(report.age_group_sensitivity) >= 4
        for row in report.age_group_sensitivity:
            assert set(row["mean_by_gender"]) <= {"Male", "Female"}

    def test_zero_gender_effect_gives_near_zero_adjustment(self):
        frame, _ = generate_synthetic_portfolio(13, 6000, gender_coefficient=0.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            report = audit(SMALL_CONFIG, frame)
        med = report.adjustment_summary["ev"]["q50"]
        scale = report.decision_summary["unaware"]["q50"]
        assert abs(med) <= 0.02 * scale

    def test_deterministic_outputs(self, small_portfolio, tmp_path):
        frame, _ = small_portfolio
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            audit(SMALL_CONFIG, frame, out_dir=tmp_path / "a")
            audit(SMALL_CONFIG, frame, out_dir=tmp_path / "b")
        for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_report_validation(self):
        with pytest.raises(InvalidInput):
            AuditReport(
                decision_summary={"bad": {"min": 1.0, "q25": 0.5, "q50": 2.0,
                                          "q75": 3.0, "max": 4.0}},
                adjustment_summary={},
                age_group_sensitivity=[],
                gini_indices={},
                quantile_tables={},
                flags={},
                config_hash="x",
            )
