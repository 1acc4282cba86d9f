"""Conditional quantities feeding the fair-rule formulas.

Two interchangeable backends estimate every conditional expectation the
corrections need: an analytic Gaussian backend with closed forms, and a
regression backend holding fitted per-quantity models (logistic class
probabilities, gamma-loss squared terms, Tweedie cross terms, pinball-loss
value-at-risk plus a tail GLM for conditional expected shortfall).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from ._validation import as_1d_floats, require_finite
from .errors import InvalidInput, TailFallbackWarning, TooFewExceedances
from .predictors import GLMRegressor, LinearPredictor

__all__ = [
    "GaussianBackend",
    "RegressionBackend",
    "LogisticClassProb",
    "QuantileRegressor",
    "ConditionalTail",
    "cond_mean_D",
    "cond_second_moment_D",
    "cond_class_prob",
    "cond_cross_term",
    "cond_squared_term",
    "fit_conditional_tail",
    "cond_es",
    "normal_es",
]


def normal_es(mean, sd, alpha):
    """Expected shortfall of N(mean, sd^2): mean + sd phi(z_a) / (1 - a)."""
    if not 0.0 <= alpha < 1.0:
        raise InvalidInput("alpha must lie in [0, 1)")
    if alpha == 0.0:
        return mean + 0.0 * sd
    z = norm.ppf(alpha)
    return mean + sd * norm.pdf(z) / (1.0 - alpha)


class GaussianBackend:
    """Joint-normal (X, D) conditional law with closed-form moments.

    The bivariate constructor mirrors the simulation-study parameterization
    (scalar X, scalar D, correlation tau); ``from_joint`` admits several
    protected attributes with a full covariance structure.
    """

    def __init__(self, mu_x, mu_d, sigma_x, sigma_d, tau):
        if sigma_x <= 0 or sigma_d <= 0:
            raise InvalidInput("sigma_x and sigma_d must be positive")
        if not -1.0 < tau < 1.0:
            raise InvalidInput("tau must lie in (-1, 1)")
        self.mu_x = float(mu_x)
        self.sigma_x = float(sigma_x)
        self.mu_d = np.array([float(mu_d)])
        self.cov_dd = np.array([[float(sigma_d) ** 2]])
        self.cov_dx = np.array([tau * sigma_x * sigma_d])
        self.tau = float(tau)

    @classmethod
    def from_joint(cls, mu_x, sigma_x, mu_d, cov_dd, cov_dx):
        self = cls.__new__(cls)
        self.mu_x = float(mu_x)
        self.sigma_x = float(sigma_x)
        self.mu_d = as_1d_floats(mu_d, "mu_d")
        self.cov_dd = np.atleast_2d(np.asarray(cov_dd, dtype=float))
        self.cov_dx = as_1d_floats(cov_dx, "cov_dx")
        if sigma_x <= 0:
            raise InvalidInput("sigma_x must be positive")
        m = self.mu_d.size
        if self.cov_dd.shape != (m, m) or self.cov_dx.size != m:
            raise InvalidInput("covariance blocks do not match mu_d")
        self.tau = float(self.cov_dx[0] / (sigma_x * np.sqrt(self.cov_dd[0, 0])))
        return self

    @property
    def n_protected(self):
        return self.mu_d.size

    def conditional_mean(self, x):
        return self.mu_d + self.cov_dx * (x - self.mu_x) / self.sigma_x**2

    def conditional_cov(self):
        return self.cov_dd - np.outer(self.cov_dx, self.cov_dx) / self.sigma_x**2

    def slope_x_given_d(self, i=0):
        """d/dt of the conditional quantile of X given D_i = t (constant)."""
        return float(self.cov_dx[i] / self.cov_dd[i, i])

    def slope_d_given_d(self, k, i):
        """d/dt of the conditional quantile of D_k given D_i = t."""
        if k == i:
            return 1.0
        return float(self.cov_dd[k, i] / self.cov_dd[i, i])

    def sample_d(self, rng, n, x):
        mean = self.conditional_mean(x)
        cov = self.conditional_cov()
        chol = np.linalg.cholesky(cov + 1e-15 * np.eye(cov.shape[0]))
        return mean + rng.standard_normal((n, mean.size)) @ chol.T

    def sample_d_unconditional(self, rng, n):
        chol = np.linalg.cholesky(self.cov_dd + 1e-15 * np.eye(self.cov_dd.shape[0]))
        return self.mu_d + rng.standard_normal((n, self.mu_d.size)) @ chol.T


@dataclass
class RegressionBackend:
    """Fitted per-quantity regressors keyed by the conditional they estimate.

    Expected keys: ``mean_d``, ``second_moment_d``, ``class_prob``,
    ``cross_term``, ``squared_term``. ``signs`` carries the dominant sign
    reattached to quantities fitted on absolute values.
    """

    models: dict
    signs: dict = field(default_factory=dict)

    def model_for(self, quantity):
        try:
            return self.models[quantity]
        except KeyError:
            raise NotFittedError(f"no fitted model for conditional quantity {quantity!r}")

    def sign_for(self, quantity):
        return float(self.signs.get(quantity, 1.0))


def _as_row_matrix(x):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return arr[None, :]
    return arr


def cond_mean_D(backend, x, i=0):
    """E[D_i | X = x]."""
    if isinstance(backend, GaussianBackend):
        return float(backend.conditional_mean(x)[i])
    model = backend.model_for("mean_d")
    return float(model.predict(_as_row_matrix(x))[0])


def cond_second_moment_D(backend, x, i=0):
    """E[D_i^2 | X = x] = Var(D_i | X) + E[D_i | X]^2 for the Gaussian backend."""
    if isinstance(backend, GaussianBackend):
        mean = backend.conditional_mean(x)[i]
        var = backend.conditional_cov()[i, i]
        return float(var + mean**2)
    model = backend.model_for("second_moment_d")
    return float(model.predict(_as_row_matrix(x))[0])


def cond_class_prob(backend, level, x):
    """P(D = level | X = x); probabilities across levels sum to one."""
    clf = backend.model_for("class_prob") if isinstance(backend, RegressionBackend) else backend
    probs = clf.predict_proba(_as_row_matrix(x))[0]
    levels = list(clf.levels_)
    if level not in levels:
        raise InvalidInput(f"unknown level {level!r}; known: {levels}")
    return float(probs[levels.index(level)])


def cond_cross_term(backend, model, i, x):
    """E[Y D_i dg/dD_i | X = x]."""
    if isinstance(backend, GaussianBackend) and isinstance(model, LinearPredictor):
        m = backend.conditional_mean(x)
        cov = backend.conditional_cov()
        beta_d = model.coef[: backend.n_protected]
        beta_x = model.coef[backend.n_protected :]
        mu_y = model.intercept + float(beta_x @ np.atleast_1d(x)) + float(beta_d @ m)
        cov_dy = cov @ beta_d
        return float(beta_d[i] * (mu_y * m[i] + cov_dy[i]))
    reg = backend.model_for("cross_term")
    return backend.sign_for("cross_term") * float(reg.predict(_as_row_matrix(x))[0])


def cond_squared_term(backend, model, i, x):
    """E[(D_i dg/dD_i)^2 | X = x]; strictly positive when D_i matters."""
    if isinstance(backend, GaussianBackend) and isinstance(model, LinearPredictor):
        m = backend.conditional_mean(x)
        cov = backend.conditional_cov()
        beta_d = model.coef[: backend.n_protected]
        return float(beta_d[i] ** 2 * (cov[i, i] + m[i] ** 2))
    reg = backend.model_for("squared_term")
    return float(reg.predict(_as_row_matrix(x))[0])


class LogisticClassProb(BaseEstimator):
    """Class probabilities P(D = t_k | X) via logistic regression.

    Binary targets use a single logit-link GLM; more levels use one-vs-rest
    fits normalized so the probabilities sum to one exactly.
    """

    def __init__(self, max_iter=100, tol=1e-10, ridge=0.0):
        self.max_iter = max_iter
        self.tol = tol
        self.ridge = ridge

    def fit(self, X, d, sample_weight=None):
        d = np.asarray(d)
        self.levels_ = tuple(np.unique(d).tolist())
        if len(self.levels_) < 2:
            raise InvalidInput("need at least two observed levels")
        self.models_ = []
        targets = self.levels_[1:] if len(self.levels_) == 2 else self.levels_
        for lvl in targets:
            glm = GLMRegressor(
                loss="binomial", link="logit", max_iter=self.max_iter, tol=self.tol,
                ridge=self.ridge,
            )
            glm.fit(X, (d == lvl).astype(float), sample_weight=sample_weight)
            self.models_.append(glm)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "models_")
        if len(self.levels_) == 2:
            p1 = np.clip(self.models_[0].predict(X), 0.0, 1.0)
            return np.column_stack([1.0 - p1, p1])
        raw = np.column_stack([np.clip(m.predict(X), 1e-12, None) for m in self.models_])
        return raw / raw.sum(axis=1, keepdims=True)


class QuantileRegressor(BaseEstimator):
    """Linear value-at-risk regression minimizing the pinball loss.

    Deterministic normalized subgradient descent on internally standardized
    features: step ``learning_rate * scale / sqrt(t)`` along the unit
    subgradient direction, with the second half of the iterates averaged.
    Normalizing the direction keeps the travel budget independent of the
    pinball gradient's magnitude, which is bounded and otherwise stalls the
    plain method.
    """

    def __init__(self, alpha=0.9, learning_rate=0.01, n_iter=5000, seed=0):
        self.alpha = alpha
        self.learning_rate = learning_rate
        self.n_iter = n_iter
        self.seed = seed

    def fit(self, X, y, sample_weight=None):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInput("alpha must lie in (0, 1)")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = as_1d_floats(y, "y")
        require_finite(y, "y")
        w = np.ones_like(y) if sample_weight is None else as_1d_floats(sample_weight)
        w = w / w.sum()
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std[std < 1e-12] = 1.0
        Xs = (X - mean) / std
        scale = max(float(np.quantile(np.abs(y), 0.9)), 1e-12)

        p = X.shape[1]
        beta = np.zeros(p)
        intercept = float(np.quantile(y, self.alpha))
        avg_beta = np.zeros(p)
        avg_intercept = 0.0
        n_avg = 0
        half = self.n_iter // 2
        for t in range(1, self.n_iter + 1):
            resid = y - intercept - Xs @ beta
            grad_common = w * (np.where(resid < 0, 1.0 - self.alpha, -self.alpha))
            g_beta = Xs.T @ grad_common
            g_int = float(np.sum(grad_common))
            g_norm = float(np.sqrt(g_beta @ g_beta + g_int**2))
            if g_norm < 1e-15:
                avg_beta += beta * max(1, self.n_iter - max(t, half))
                avg_intercept += intercept * max(1, self.n_iter - max(t, half))
                n_avg += max(1, self.n_iter - max(t, half))
                break
            step = self.learning_rate * scale / (np.sqrt(t) * g_norm)
            beta = beta - step * g_beta
            intercept = intercept - step * g_int
            if t > half:
                avg_beta += beta
                avg_intercept += intercept
                n_avg += 1
        beta = avg_beta / n_avg
        intercept = avg_intercept / n_avg
        self.coef_ = beta / std
        self.intercept_ = intercept - float(np.sum(beta * mean / std))
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        return self.intercept_ + X @ self.coef_

    def pinball_loss(self, X, y, sample_weight=None):
        resid = np.asarray(y, float) - self.predict(X)
        loss = np.where(resid >= 0, self.alpha * resid, (self.alpha - 1.0) * resid)
        if sample_weight is None:
            return float(loss.mean())
        w = np.asarray(sample_weight, float)
        return float(np.sum(w * loss) / np.sum(w))


@dataclass
class ConditionalTail:
    """Two-step conditional expected-shortfall estimator."""

    alpha: float
    var_model: QuantileRegressor
    tail_model: GLMRegressor | None
    fallback_mean: float | None = None
    n_exceedances: int = 0

    @property
    def used_fallback(self):
        return self.tail_model is None


def fit_conditional_tail(X, y, alpha, sample_weight=None, min_exceedances=50,
                         tail_power=1.5, quantile_iters=5000, learning_rate=0.01,
                         on_few="raise", ridge=0.0):
    """Fit VaR by quantile regression, then a Tweedie GLM on exceedances.

    Below ``min_exceedances`` exceedance rows the fit raises
    :class:`TooFewExceedances`; with ``on_few="fallback"`` (the audit
    pipeline's choice) it instead warns and falls back to the unconditional
    empirical tail mean, flagging the estimator.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidInput("alpha must lie in (0, 1)")
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = as_1d_floats(y, "y")
    var_model = QuantileRegressor(alpha=alpha, n_iter=quantile_iters,
                                  learning_rate=learning_rate)
    var_model.fit(X, y, sample_weight=sample_weight)
    var_hat = var_model.predict(X)
    exceed = y > var_hat
    n_exc = int(np.sum(exceed))
    if n_exc < min_exceedances:
        if on_few != "fallback" or n_exc == 0:
            raise TooFewExceedances(
                f"only {n_exc} observations above the fitted value-at-risk "
                f"(minimum {min_exceedances})"
            )
        warnings.warn(
            f"only {n_exc} exceedances; using the unconditional tail mean",
            TailFallbackWarning,
        )
        thresh = np.quantile(y, alpha)
        tail = y[y > thresh]
        fallback = float(tail.mean()) if tail.size else float(y.max())
        return ConditionalTail(alpha=alpha, var_model=var_model, tail_model=None,
                               fallback_mean=fallback, n_exceedances=n_exc)
    w_exc = None if sample_weight is None else np.asarray(sample_weight, float)[exceed]
    # exceedance subsets routinely miss rare one-hot levels, so a ridge
    # keeps the tail design workable
    tail_model = GLMRegressor(loss="tweedie", link="log", power=tail_power,
                              max_iter=5000, tol=1e-6, ridge=ridge)
    tail_model.fit(X[exceed], y[exceed], sample_weight=w_exc)
    return ConditionalTail(alpha=alpha, var_model=var_model, tail_model=tail_model,
                           n_exceedances=n_exc)


def cond_es(tail: ConditionalTail, x):
    """Conditional expected shortfall at the tail's level for feature rows."""
    mat = _as_row_matrix(x)
    if tail.used_fallback:
        out = np.full(mat.shape[0], tail.fallback_mean)
    else:
        out = tail.tail_model.predict(mat)
    if np.asarray(x).ndim == 1:
        return float(out[0])
    return out


# ---------------------------------------------------------------------------
# backend serialization (same versioned store as the prediction models)


def _member_doc(model):
    import json

    from .predictors import model_to_json

    if isinstance(model, LogisticClassProb):
        return {
            "family": "logistic_class_prob",
            "levels": [float(lvl) for lvl in model.levels_],
            "members": [json.loads(model_to_json(glm)) for glm in model.models_],
        }
    if isinstance(model, QuantileRegressor):
        check_is_fitted(model, "coef_")
        return {
            "family": "quantile_regression",
            "alpha": model.alpha,
            "learning_rate": model.learning_rate,
            "n_iter": model.n_iter,
            "intercept": float(model.intercept_),
            "coef": [float(c) for c in model.coef_],
        }
    return json.loads(model_to_json(model))


def _member_from_doc(doc):
    import json

    from .predictors import model_from_json

    if doc.get("family") == "logistic_class_prob":
        clf = LogisticClassProb()
        clf.levels_ = tuple(doc["levels"])
        clf.models_ = [model_from_json(json.dumps(d)) for d in doc["members"]]
        return clf
    if doc.get("family") == "quantile_regression":
        qr = QuantileRegressor(alpha=doc["alpha"], learning_rate=doc["learning_rate"],
                               n_iter=doc["n_iter"])
        qr.intercept_ = float(doc["intercept"])
        qr.coef_ = np.array(doc["coef"], dtype=float)
        return qr
    return model_from_json(json.dumps(doc))


def backend_to_json(backend: RegressionBackend):
    """Serialize a regression backend into the versioned model store."""
    import json

    doc = {
        "version": 1,
        "kind": "regression_backend",
        "models": {name: _member_doc(m) for name, m in backend.models.items()},
        "signs": {k: float(v) for k, v in backend.signs.items()},
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def backend_from_json(text):
    import json

    doc = json.loads(text)
    if doc.get("kind") != "regression_backend" or doc.get("version") != 1:
        raise InvalidInput("not a regression-backend document")
    models = {name: _member_from_doc(d) for name, d in doc["models"].items()}
    return RegressionBackend(models=models, signs=dict(doc.get("signs", {})))
