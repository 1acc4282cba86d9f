import json

import numpy as np
import pytest

from marginalfair.errors import ConvergenceError, InvalidInput, SingularDesign
from marginalfair.oracle import deviance_oracle
from marginalfair.predictors import (
    EncodedDataset,
    GLMRegressor,
    LinearPredictor,
    PortfolioEncoder,
    delta_g,
    model_from_json,
    model_to_json,
    partial_g,
    predict,
)


def make_glm(loss, link, intercept, coef, power=1.5):
    glm = GLMRegressor(loss=loss, link=link, power=power)
    glm.coef_ = np.asarray(coef, dtype=float)
    glm.intercept_ = float(intercept)
    glm.n_features_in_ = glm.coef_.size
    return glm


class TestFitting:
    def test_exact_linear_recovery(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(200, 2))
        y = 1.0 + 2.0 * X[:, 0] + 1.0 * X[:, 1]
        glm = GLMRegressor(loss="gaussian", link="identity").fit(X, y)
        assert glm.intercept_ == pytest.approx(1.0, abs=1e-6)
        assert glm.coef_[0] == pytest.approx(2.0, abs=1e-6)
        assert glm.coef_[1] == pytest.approx(1.0, abs=1e-6)

    def test_poisson_intercept_only(self):
        y = np.full(50, 7.0)
        X = np.zeros((50, 0))
        glm = GLMRegressor(loss="poisson", link="log").fit(X, y)
        assert glm.intercept_ == pytest.approx(np.log(7.0), abs=1e-8)

    def test_tweedie_matches_long_run_oracle(self):
        rng = np.random.default_rng(1)
        n = 500
        X = np.column_stack([rng.normal(size=n), rng.binomial(1, 0.4, n).astype(float)])
        mu = np.exp(0.5 + 0.4 * X[:, 0] - 0.3 * X[:, 1])
        counts = rng.poisson(mu)
        y = np.array([rng.gamma(2.0, 0.5 * 3.0, size=c).sum() for c in counts])
        glm = GLMRegressor(loss="tweedie", link="log", power=1.5, max_iter=5000, tol=1e-7)
        glm.fit(X, y)
        oracle = deviance_oracle(X, y, loss="tweedie", link="log", power=1.5, max_iter=50_000)
        assert glm.deviance_ <= 1.005 * oracle["deviance"]

    def test_noiseless_loglink_recovery_property(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            beta = rng.uniform(-2, 2, size=3)
            X = rng.normal(size=(400, 2))
            y = np.exp(beta[0] + X @ beta[1:])
            glm = GLMRegressor(loss="poisson", link="log", max_iter=200).fit(X, y)
            recovered = np.concatenate([[glm.intercept_], glm.coef_])
            assert np.allclose(recovered, beta, atol=1e-5)

    def test_exposure_weights_change_fit(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(300, 1))
        y = np.exp(0.2 + 0.5 * X[:, 0]) + rng.normal(scale=0.01, size=300)
        w = np.linspace(0.1, 2.0, 300)
        a = GLMRegressor(loss="gaussian", link="log", max_iter=200).fit(X, y)
        b = GLMRegressor(loss="gaussian", link="log", max_iter=200).fit(X, y, sample_weight=w)
        assert not np.allclose(a.coef_, b.coef_, atol=1e-12)

    def test_singular_design_raises(self):
        X = np.column_stack([np.ones(50), np.ones(50)])
        y = np.arange(50, dtype=float)
        with pytest.raises(SingularDesign):
            GLMRegressor(loss="gaussian", link="identity").fit(X, y)

    def test_ridge_rescues_singular_design(self):
        X = np.column_stack([np.ones(50), np.ones(50)])
        y = np.arange(50, dtype=float)
        glm = GLMRegressor(loss="gaussian", link="identity", ridge=1e-8).fit(X, y)
        assert np.isfinite(glm.coef_).all()

    def test_nonconvergence_raises_with_gradient_norm(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(200, 2))
        y = np.exp(0.5 + X @ np.array([0.4, -0.3])) + rng.gamma(1.0, 1.0, 200)
        with pytest.raises(ConvergenceError) as err:
            GLMRegressor(loss="tweedie", link="log", max_iter=3, tol=1e-12).fit(X, y)
        assert err.value.gradient_norm is not None

    def test_response_domain_checks(self):
        X = np.ones((10, 1))
        with pytest.raises(InvalidInput):
            GLMRegressor(loss="gamma", link="log").fit(X, np.zeros(10))
        with pytest.raises(InvalidInput):
            GLMRegressor(loss="poisson", link="log").fit(X, -np.ones(10))
        with pytest.raises(InvalidInput):
            GLMRegressor(loss="tweedie", link="log", power=2.5).fit(X, np.ones(10))


class TestPredict:
    def test_linear_substitution(self):
        model = LinearPredictor(intercept=1.0, coef=[1.0, 2.0], n_protected=1)
        assert predict(model, 3.0, 0.5) == pytest.approx(5.0, abs=1e-12)

    def test_log_link_all_zero_coefficients(self):
        glm = make_glm("tweedie", "log", 0.0, [0.0, 0.0])
        assert predict(glm, 0.7, 1.3) == pytest.approx(1.0, abs=1e-12)

    def test_protected_term_vanishes(self):
        model = LinearPredictor(intercept=0.8, coef=[2.5, 1.1], n_protected=1)
        assert predict(model, 0.0, 1.0) == pytest.approx(0.8 + 1.1, abs=1e-12)

    def test_dimension_mismatch(self):
        model = LinearPredictor(intercept=0.0, coef=[1.0, 1.0], n_protected=1)
        with pytest.raises(InvalidInput):
            predict(model, [1.0, 2.0], [3.0])

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        coef = rng.normal(size=4)
        model = LinearPredictor(intercept=0.3, coef=coef, n_protected=2)
        perm = [2, 0, 3, 1]
        permuted = LinearPredictor(intercept=0.3, coef=coef[perm], n_protected=2)
        z = rng.normal(size=4)
        assert predict(model, z[:2], z[2:]) == pytest.approx(
            float(permuted.predict(z[perm])), abs=1e-12
        )


class TestPartials:
    def test_linear_constant_slope(self):
        model = LinearPredictor(intercept=1.0, coef=[1.0, 2.0], n_protected=1)
        assert partial_g(model, 0, 3.0, -1.0) == pytest.approx(1.0, abs=1e-15)

    def test_log_link_chain_rule(self):
        # beta_D = -0.2 at a point where the prediction equals 50
        glm = make_glm("tweedie", "log", np.log(50.0), [-0.2, 0.0])
        assert predict(glm, 0.0, 0.0) == pytest.approx(50.0, abs=1e-9)
        assert partial_g(glm, 0, 0.0, 0.0) == pytest.approx(-10.0, abs=1e-8)

    def test_numeric_fallback_square(self):
        model = lambda z: np.atleast_1d(z)[..., 0] ** 2
        assert partial_g(model, 0, 3.0, 0.0) == pytest.approx(6.0, abs=1e-5)

    def test_onehot_column_rejected(self):
        glm = make_glm("tweedie", "log", 0.0, [0.1, 0.2])
        glm.onehot_columns = (0,)
        with pytest.raises(InvalidInput):
            partial_g(glm, 0, 1.0, 0.5)

    def test_analytic_agrees_with_finite_differences(self):
        rng = np.random.default_rng(6)
        glm = make_glm("tweedie", "log", 0.2, [0.3, -0.4, 0.1])
        for _ in range(100):
            d = rng.uniform(0.5, 2.0)
            x = rng.uniform(-1.0, 1.0, size=2)
            analytic = partial_g(glm, 0, d, x)
            h = 1e-5 * max(1.0, abs(d))
            fd = (predict(glm, d + h, x) - predict(glm, d - h, x)) / (2 * h)
            assert analytic == pytest.approx(fd, rel=1e-4)


class TestDeltaG:
    def test_linear_level_difference(self):
        model = LinearPredictor(intercept=1.0, coef=[1.0, 2.0], n_protected=1)
        assert delta_g(model, 0, (0.0, 1.0), [], 0.5) == pytest.approx(-1.0, abs=1e-12)

    def test_equal_levels_zero(self):
        model = LinearPredictor(intercept=1.0, coef=[1.0, 2.0], n_protected=1)
        assert delta_g(model, 0, (1.0, 1.0), [], 0.5) == 0.0

    def test_binary_log_link(self):
        # g(level 0) = 40, g(level 1) = 50 -> difference -10
        glm = make_glm("tweedie", "log", np.log(40.0), [np.log(50.0 / 40.0), 0.0])
        assert delta_g(glm, 0, (0.0, 1.0), [], 0.0) == pytest.approx(-10.0, abs=1e-9)

    def test_unknown_level(self):
        model = LinearPredictor(intercept=0.0, coef=[1.0, 0.0], n_protected=1)
        with pytest.raises(InvalidInput):
            delta_g(model, 0, (0.0, 2.0), [], 0.0, valid_levels=[0.0, 1.0])


class TestSerialization:
    def test_roundtrip_linear(self):
        model = LinearPredictor(intercept=0.5, coef=[1.0, -2.0], n_protected=1,
                                feature_names=("d", "x"))
        text = model_to_json(model)
        back = model_from_json(text)
        assert back.intercept == model.intercept
        assert np.array_equal(back.coef, model.coef)

    def test_roundtrip_glm_and_byte_stability(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(100, 2))
        y = np.exp(0.1 + X @ np.array([0.2, -0.1]))
        glm = GLMRegressor(loss="poisson", link="log").fit(X, y)
        glm.onehot_columns = (1,)
        t1 = model_to_json(glm)
        t2 = model_to_json(model_from_json(t1))
        assert t1 == t2
        doc = json.loads(t1)
        assert doc["version"] == 1

    def test_predictions_survive_roundtrip(self):
        glm = make_glm("gamma", "log", 0.3, [0.2, 0.1])
        back = model_from_json(model_to_json(glm))
        z = np.array([[0.5, -0.2]])
        assert back.predict(z)[0] == pytest.approx(glm.predict(z)[0], abs=1e-15)


def small_frame(n=40, seed=0):
    rng = np.random.default_rng(seed)
    return {
        "Gender": rng.choice(["Male", "Female"], n),
        "Type": rng.choice(list("ABCDEF"), n),
        "Category": rng.choice(["Large", "Medium", "Small"], n),
        "Occupation": rng.choice(["Employed", "Housewife", "Retired"], n),
        "Age": rng.integers(18, 75, n),
        "Group1": rng.integers(1, 21, n).astype(str),
        "Poldur": rng.integers(0, 15, n),
        "Value": rng.uniform(1000, 50000, n),
        "Adind": rng.integers(0, 2, n),
        "Group2": rng.choice([f"R{i}" for i in range(1, 11)], n),
        "Density": rng.uniform(10, 3000, n),
    }


class TestEncoder:
    def test_protected_column_first(self):
        frame = small_frame()
        enc = PortfolioEncoder().fit(frame)
        names = enc.feature_names()
        assert names[0] == "Gender=Female"
        mat = enc.transform(frame)
        assert mat.shape == (40, len(names))
        assert set(np.unique(mat[:, 0])) <= {0.0, 1.0}

    def test_age_binning(self):
        frame = small_frame()
        frame["Age"] = np.array([18, 27, 28, 67, 68, 74] + [30] * 34)
        enc = PortfolioEncoder().fit(frame)
        mat = enc.transform(frame)
        names = enc.feature_names()
        age_cols = [i for i, nm in enumerate(names) if nm.startswith("Age=")]
        # first two rows fall in the reference bin [18, 28)
        assert mat[0, age_cols].sum() == 0.0
        assert mat[1, age_cols].sum() == 0.0
        assert mat[2, age_cols].sum() == 1.0

    def test_encode_dataset_validates(self):
        frame = small_frame()
        enc = PortfolioEncoder().fit(frame)
        data = enc.encode_dataset(frame, response=np.ones(40), exposure=np.full(40, 0.5))
        assert data.protected_columns == (0,)
        with pytest.raises(InvalidInput):
            enc.encode_dataset(frame, response=np.ones(40), exposure=np.zeros(40))

    def test_encoded_dataset_rejects_nan(self):
        with pytest.raises(InvalidInput):
            EncodedDataset(matrix=np.array([[np.nan]]), response=np.array([1.0]),
                           exposure=None, feature_names=("a",))


class TestEncoderSerialization:
    def test_roundtrip_reproduces_encoding(self):
        frame = small_frame(60, seed=9)
        enc = PortfolioEncoder().fit(frame)
        back = PortfolioEncoder.from_dict(enc.to_dict())
        assert back.feature_names() == enc.feature_names()
        assert np.array_equal(back.transform(frame), enc.transform(frame))

    def test_embedded_in_model_document(self):
        import json

        frame = small_frame(60, seed=9)
        enc = PortfolioEncoder().fit(frame)
        glm = make_glm("tweedie", "log", 0.1, [0.2] * len(enc.feature_names()))
        doc = json.loads(model_to_json(glm, encoding=enc))
        assert doc["encoding"]["protected"] == "Gender"
        rebuilt = PortfolioEncoder.from_dict(doc["encoding"])
        assert rebuilt.feature_names() == enc.feature_names()
