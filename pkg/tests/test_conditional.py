import numpy as np
import pytest
from scipy.stats import norm
from sklearn.exceptions import NotFittedError

from marginalfair.conditional import (
    ConditionalTail,
    GaussianBackend,
    LogisticClassProb,
    QuantileRegressor,
    RegressionBackend,
    cond_class_prob,
    cond_cross_term,
    cond_es,
    cond_mean_D,
    cond_second_moment_D,
    cond_squared_term,
    fit_conditional_tail,
    normal_es,
)
from marginalfair.errors import TailFallbackWarning, TooFewExceedances
from marginalfair.predictors import GLMRegressor, LinearPredictor

BACKEND = GaussianBackend(mu_x=0.0, mu_d=3.0, sigma_x=1.0, sigma_d=2.0, tau=0.5)
MODEL = LinearPredictor(intercept=1.0, coef=[1.0, 2.0], n_protected=1)


class TestGaussianBackend:
    def test_conditional_mean(self):
        assert cond_mean_D(BACKEND, 1.0) == pytest.approx(4.0, abs=1e-12)

    def test_independence_gives_unconditional_mean(self):
        b = GaussianBackend(mu_x=0.0, mu_d=3.0, sigma_x=1.0, sigma_d=2.0, tau=0.0)
        for x in (-5.0, 0.0, 7.0):
            assert cond_mean_D(b, x) == pytest.approx(3.0, abs=1e-12)

    def test_second_moment(self):
        assert cond_second_moment_D(BACKEND, 1.0) == pytest.approx(19.0, abs=1e-12)

    def test_second_moment_independent(self):
        b = GaussianBackend(mu_x=0.0, mu_d=3.0, sigma_x=1.0, sigma_d=2.0, tau=0.0)
        assert cond_second_moment_D(b, 2.0) == pytest.approx(4.0 + 9.0, abs=1e-12)

    def test_near_degenerate_point_mass(self):
        b = GaussianBackend(mu_x=0.0, mu_d=5.0, sigma_x=1.0, sigma_d=1e-7, tau=0.0)
        assert cond_second_moment_D(b, 0.0) == pytest.approx(25.0, rel=1e-10)

    def test_cross_term_value(self):
        assert cond_cross_term(BACKEND, MODEL, 0, 0.0) == pytest.approx(15.0, abs=1e-12)

    def test_cross_term_monte_carlo(self):
        rng = np.random.default_rng(0)
        n = 400_000
        d = BACKEND.sample_d(rng, n, 0.0)[:, 0]
        y = 1.0 + 2.0 * 0.0 + d + rng.normal(0, 0.5, n)
        mc = np.mean(y * d * 1.0)
        assert mc == pytest.approx(15.0, abs=0.1)

    def test_squared_term_value(self):
        assert cond_squared_term(BACKEND, MODEL, 0, 0.0) == pytest.approx(12.0, abs=1e-12)

    def test_squared_term_degenerate_when_no_effect(self):
        model0 = LinearPredictor(intercept=1.0, coef=[0.0, 2.0], n_protected=1)
        assert cond_squared_term(BACKEND, model0, 0, 0.0) == 0.0

    def test_affine_conditional_mean_slope(self):
        xs = np.linspace(-3, 3, 13)
        means = np.array([cond_mean_D(BACKEND, x) for x in xs])
        slopes = np.diff(means) / np.diff(xs)
        assert np.allclose(slopes, 0.5 * 2.0 / 1.0, atol=1e-12)

    def test_jensen_inequality(self):
        rng = np.random.default_rng(1)
        for x in rng.uniform(-3, 3, 10):
            assert cond_second_moment_D(BACKEND, x) > cond_mean_D(BACKEND, x) ** 2


class TestRegressionBackend:
    def test_unfitted_quantity_raises(self):
        backend = RegressionBackend(models={})
        with pytest.raises(NotFittedError):
            cond_mean_D(backend, np.array([1.0]))

    def test_mean_regression_close_to_analytic(self):
        rng = np.random.default_rng(2)
        n = 100_000
        x = rng.normal(0.0, 1.0, n)
        d = 3.0 + 1.0 * x + rng.normal(0.0, np.sqrt(3.0), n)
        reg = GLMRegressor(loss="gaussian", link="identity").fit(x[:, None], d)
        backend = RegressionBackend(models={"mean_d": reg})
        assert cond_mean_D(backend, np.array([1.0])) == pytest.approx(4.0, abs=0.05)

    def test_squared_and_cross_terms_vs_analytic(self):
        # positive covariate support keeps the product target one-signed,
        # which the absolute-value Tweedie fit approximates well
        rng = np.random.default_rng(3)
        n = 100_000
        x = rng.uniform(0.0, 2.0, n)
        d = 3.0 + x + rng.normal(0.0, np.sqrt(3.0), n)
        y = 1.0 + 2.0 * x + d + rng.normal(0.0, 0.5, n)
        feats = np.column_stack([x, x**2])
        gamma_fit = GLMRegressor(loss="gamma", link="log", max_iter=100).fit(feats, d**2)
        cross_target = y * d
        tweedie_fit = GLMRegressor(loss="tweedie", link="log", max_iter=3000, tol=1e-6)
        tweedie_fit.fit(feats, np.abs(cross_target))
        backend = RegressionBackend(
            models={"squared_term": gamma_fit, "cross_term": tweedie_fit},
            signs={"cross_term": float(np.sign(cross_target.mean()))},
        )
        for xq in np.linspace(0.2, 1.8, 20):
            m = 3.0 + xq
            analytic_sq = 3.0 + m**2
            analytic_cross = (1.0 + 2.0 * xq) * m + (3.0 + m**2)
            row = np.array([xq, xq**2])
            est_sq = cond_squared_term(backend, MODEL, 0, row)
            est_cross = cond_cross_term(backend, MODEL, 0, row)
            assert est_sq == pytest.approx(analytic_sq, rel=0.05)
            assert est_cross == pytest.approx(analytic_cross, rel=0.05)


class TestClassProb:
    def test_independent_levels_recover_base_rate(self):
        rng = np.random.default_rng(4)
        n = 20_000
        X = rng.normal(size=(n, 2))
        d = (rng.random(n) < 0.3).astype(float)
        clf = LogisticClassProb().fit(X, d)
        backend = RegressionBackend(models={"class_prob": clf})
        for x in rng.normal(size=(5, 2)):
            assert cond_class_prob(backend, 1.0, x) == pytest.approx(0.3, abs=0.02)

    def test_separable_data(self):
        rng = np.random.default_rng(5)
        X = np.concatenate([rng.normal(-3, 0.5, 200), rng.normal(3, 0.5, 200)])[:, None]
        d = np.concatenate([np.zeros(200), np.ones(200)])
        clf = LogisticClassProb().fit(X, d)
        probs = clf.predict_proba(np.array([[-3.0], [3.0]]))
        assert probs[0, 0] >= 0.99
        assert probs[1, 1] >= 0.99

    def test_three_levels_sum_to_one(self):
        rng = np.random.default_rng(6)
        n = 5000
        X = rng.normal(size=(n, 2))
        d = rng.choice([0.0, 1.0, 2.0], n, p=[0.5, 0.3, 0.2])
        clf = LogisticClassProb().fit(X, d)
        probs = clf.predict_proba(rng.normal(size=(50, 2)))
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-8)
        assert np.all((probs >= 0) & (probs <= 1))


class TestQuantileRegression:
    def test_recovers_conditional_quantile(self):
        rng = np.random.default_rng(7)
        n = 30_000
        x = rng.normal(size=n)
        y = 2.0 + 1.5 * x + rng.normal(0, 1.0, n)
        qr = QuantileRegressor(alpha=0.9, n_iter=3000).fit(x[:, None], y)
        z90 = norm.ppf(0.9)
        assert qr.intercept_ == pytest.approx(2.0 + z90, abs=0.08)
        assert qr.coef_[0] == pytest.approx(1.5, abs=0.05)

    def test_loss_not_worse_than_unconditional(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=5000)
        y = 1.0 + 2.0 * x + rng.normal(size=5000)
        qr = QuantileRegressor(alpha=0.9, n_iter=2000).fit(x[:, None], y)
        flat = np.quantile(y, 0.9)
        resid = y - flat
        flat_loss = np.mean(np.where(resid >= 0, 0.9 * resid, -0.1 * resid))
        assert qr.pinball_loss(x[:, None], y) < flat_loss


class TestConditionalTail:
    def test_normal_es_constant(self):
        assert normal_es(0.0, 1.0, 0.9) == pytest.approx(1.7550, abs=1e-4)
        assert normal_es(2.0, 3.0, 0.9) == pytest.approx(2.0 + 3.0 * 1.75498, abs=1e-3)

    def test_alpha_zero_is_mean(self):
        assert normal_es(5.0, 2.0, 0.0) == pytest.approx(5.0, abs=1e-12)

    def test_two_step_estimate_vs_closed_form(self):
        rng = np.random.default_rng(9)
        n = 100_000
        x = rng.uniform(0.0, 1.0, n)
        mean = np.exp(0.5 + 1.0 * x)
        y = mean * np.exp(rng.normal(0, 0.3, n) - 0.045)
        tail = fit_conditional_tail(x[:, None], y, alpha=0.9, quantile_iters=3000)
        assert not tail.used_fallback
        for xq in np.linspace(0.1, 0.9, 10):
            m = np.exp(0.5 + xq) * np.exp(-0.045)
            # lognormal tail mean: E[Y | Y > q_0.9]
            s = 0.3
            q = np.log(m) + s**2 / 2 - s**2 / 2 + norm.ppf(0.9) * s
            closed = m * np.exp(s**2 / 2) * (1 - norm.cdf(norm.ppf(0.9) - s)) / 0.1
            est = cond_es(tail, np.array([xq]))
            assert est == pytest.approx(closed, rel=0.05)

    def test_fallback_below_minimum(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=300)
        y = np.abs(rng.normal(size=300))
        with pytest.warns(TailFallbackWarning):
            tail = fit_conditional_tail(x[:, None], y, alpha=0.9, min_exceedances=100,
                                        quantile_iters=500, on_few="fallback")
        assert tail.used_fallback
        assert cond_es(tail, np.array([0.0])) == pytest.approx(tail.fallback_mean)

    def test_too_few_exceedances_raises(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=300)
        y = np.abs(rng.normal(size=300))
        with pytest.raises(TooFewExceedances):
            fit_conditional_tail(x[:, None], y, alpha=0.9, min_exceedances=100,
                                 quantile_iters=500)


class TestStochasticOrderConvergence:
    def test_error_shrinks_with_sample_size(self):
        # regression estimates converge to analytic values: at matched
        # seeds the n=1e5 error is at most half the n=1e4 error in a
        # majority of three seeds
        wins = 0
        for seed in (1, 2, 3):
            errs = {}
            for n in (10_000, 100_000):
                rng = np.random.default_rng(seed)
                x = rng.normal(0.0, 1.0, n)
                d = 3.0 + x + rng.normal(0.0, np.sqrt(3.0), n)
                reg = GLMRegressor(loss="gaussian", link="identity").fit(x[:, None], d)
                grid = np.linspace(-2, 2, 9)
                est = reg.predict(grid[:, None])
                errs[n] = float(np.max(np.abs(est - (3.0 + grid))))
            if errs[100_000] <= 0.5 * errs[10_000]:
                wins += 1
        assert wins >= 2


class TestBackendSerialization:
    def test_roundtrip(self):
        from marginalfair.conditional import backend_from_json, backend_to_json

        rng = np.random.default_rng(12)
        n = 3000
        X = rng.normal(size=(n, 2))
        d = (rng.random(n) < 0.4).astype(float)
        y = np.exp(0.2 + X @ np.array([0.3, -0.2])) + rng.gamma(1.0, 1.0, n)
        clf = LogisticClassProb().fit(X, d)
        qr = QuantileRegressor(alpha=0.8, n_iter=400).fit(X, y)
        reg = GLMRegressor(loss="gamma", link="log").fit(X, y)
        backend = RegressionBackend(
            models={"class_prob": clf, "var": qr, "squared_term": reg},
            signs={"cross_term": -1.0},
        )
        text = backend_to_json(backend)
        back = backend_from_json(text)
        row = np.array([[0.3, -0.5]])
        assert np.allclose(back.models["class_prob"].predict_proba(row),
                           clf.predict_proba(row), atol=1e-15)
        assert back.models["var"].predict(row)[0] == pytest.approx(qr.predict(row)[0])
        assert back.models["squared_term"].predict(row)[0] == pytest.approx(
            reg.predict(row)[0]
        )
        assert back.sign_for("cross_term") == -1.0
        assert backend_to_json(back) == text
