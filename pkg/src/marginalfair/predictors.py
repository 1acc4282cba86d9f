"""Prediction functions g(D, X): linear models and GLM-family regressors.

Fitting is deterministic: gaussian/poisson/gamma/binomial losses use IRLS,
the Tweedie loss uses full-batch Adam with a fixed learning rate on
internally standardized features. Fitted models expose response-scale
prediction, analytic partial derivatives where the family allows, and
discrete level differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_1d_floats, require_finite
from .errors import ConvergenceError, InvalidInput, SingularDesign

__all__ = [
    "LinearPredictor",
    "GLMRegressor",
    "EncodedDataset",
    "PortfolioEncoder",
    "fit_glm",
    "predict",
    "partial_g",
    "delta_g",
    "model_to_json",
    "model_from_json",
]

MODEL_STORE_VERSION = 1


# ---------------------------------------------------------------------------
# family / link primitives


def _link_fun(link, mu):
    if link == "identity":
        return mu
    if link == "log":
        return np.log(mu)
    if link == "logit":
        return np.log(mu / (1.0 - mu))
    raise InvalidInput(f"unknown link {link!r}")


def _link_inv(link, eta):
    if link == "identity":
        return eta
    if link == "log":
        return np.exp(eta)
    if link == "logit":
        return 1.0 / (1.0 + np.exp(-eta))
    raise InvalidInput(f"unknown link {link!r}")


def _mu_eta(link, eta, mu):
    """d mu / d eta."""
    if link == "identity":
        return np.ones_like(eta)
    if link == "log":
        return mu
    if link == "logit":
        return mu * (1.0 - mu)
    raise InvalidInput(f"unknown link {link!r}")


def _variance(loss, mu, power):
    if loss == "gaussian":
        return np.ones_like(mu)
    if loss == "poisson":
        return mu
    if loss == "gamma":
        return mu**2
    if loss == "binomial":
        return mu * (1.0 - mu)
    if loss == "tweedie":
        return mu**power
    raise InvalidInput(f"unknown loss {loss!r}")


def unit_deviance(loss, y, mu, power=1.5):
    """Per-observation deviance contribution for the given loss."""
    if loss == "gaussian":
        return (y - mu) ** 2
    if loss == "poisson":
        ylogy = np.where(y > 0, y * np.log(np.where(y > 0, y / mu, 1.0)), 0.0)
        return 2.0 * (ylogy - (y - mu))
    if loss == "gamma":
        return 2.0 * (-np.log(y / mu) + (y - mu) / mu)
    if loss == "binomial":
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = np.where(y > 0, y * np.log(y / mu), 0.0)
            t0 = np.where(y < 1, (1.0 - y) * np.log((1.0 - y) / (1.0 - mu)), 0.0)
        return 2.0 * (t1 + t0)
    if loss == "tweedie":
        p = power
        return 2.0 * (
            np.where(y > 0, y ** (2.0 - p), 0.0) / ((1.0 - p) * (2.0 - p))
            - y * mu ** (1.0 - p) / (1.0 - p)
            + mu ** (2.0 - p) / (2.0 - p)
        )
    raise InvalidInput(f"unknown loss {loss!r}")


def deviance(loss, y, mu, sample_weight=None, power=1.5):
    d = unit_deviance(loss, y, mu, power)
    if sample_weight is None:
        return float(np.sum(d))
    return float(np.sum(sample_weight * d))


def _deviance_gradient(loss, link, X, y, mu, eta, w, power):
    """Gradient of the (weighted) deviance with respect to coefficients."""
    dmu = _mu_eta(link, eta, mu)
    resid = 2.0 * (mu - y) / _variance(loss, mu, power)
    return X.T @ (w * resid * dmu)


def _check_response(loss, y):
    if loss in ("poisson", "tweedie") and np.any(y < 0):
        raise InvalidInput(f"{loss} loss requires a nonnegative response")
    if loss == "gamma" and np.any(y <= 0):
        raise InvalidInput("gamma loss requires a strictly positive response")
    if loss == "binomial" and (np.any(y < 0) or np.any(y > 1)):
        raise InvalidInput("binomial loss requires responses in [0, 1]")


def _init_mu(loss, y, w):
    if loss == "binomial":
        m = float(np.average(y, weights=w))
        m = min(max(m, 1e-6), 1.0 - 1e-6)
        return np.full_like(y, m)
    m = float(np.average(y, weights=w))
    if loss in ("poisson", "gamma", "tweedie"):
        m = max(m, 1e-8)
    return np.full_like(y, m)


# ---------------------------------------------------------------------------
# optimizers


def _solve_weighted_ls(X, W, z, ridge):
    XtW = X.T * W
    A = XtW @ X
    if ridge > 0:
        A = A + ridge * np.eye(A.shape[0])
    b = XtW @ z
    try:
        c = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        if ridge > 0:
            raise SingularDesign("design matrix singular even with ridge")
        raise SingularDesign("design matrix is rank deficient; set ridge > 0 to proceed")
    return np.linalg.solve(c.T, np.linalg.solve(c, b))


def _irls(X, y, w, loss, link, power, max_iter, tol, ridge):
    n = y.size
    mu = _init_mu(loss, y, w)
    eta = _link_fun(link, mu)
    beta = np.zeros(X.shape[1])
    dev = deviance(loss, y, mu, w, power)
    n_iter = 0
    converged = False
    for n_iter in range(1, max_iter + 1):
        if loss == "binomial":
            mu = np.clip(mu, 1e-10, 1.0 - 1e-10)
        dmu = _mu_eta(link, eta, mu)
        var = _variance(loss, mu, power)
        W = w * dmu**2 / var
        z = eta + (y - mu) / dmu
        beta = _solve_weighted_ls(X, W, z, ridge)
        eta = X @ beta
        mu = _link_inv(link, eta)
        if loss in ("poisson", "gamma", "tweedie") and link == "identity":
            mu = np.maximum(mu, 1e-10)
        if loss == "binomial":
            mu = np.clip(mu, 1e-10, 1.0 - 1e-10)
        dev_new = deviance(loss, y, mu, w, power)
        if abs(dev_new - dev) / (0.1 + abs(dev_new)) < tol:
            dev = dev_new
            converged = True
            break
        dev = dev_new
    grad = _deviance_gradient(loss, link, X, y, mu, eta, w, power) / n
    grad_norm = float(np.max(np.abs(grad)))
    if not converged:
        raise ConvergenceError(
            f"IRLS did not converge in {max_iter} iterations", gradient_norm=grad_norm
        )
    return beta, dev, n_iter, grad_norm


def _adam(X, y, w, loss, link, power, max_iter, tol, learning_rate, beta0=None):
    """Full-batch Adam on the mean weighted deviance; deterministic.

    Converged when the gradient norm drops below ``tol`` or, since a fixed
    learning rate makes Adam orbit the optimum, when the best deviance seen
    stops improving for several consecutive checkpoints; the best iterate
    is returned either way.
    """
    n, p = X.shape
    beta = np.zeros(p) if beta0 is None else beta0.copy()
    if beta0 is None:
        beta[0] = _link_fun(link, max(float(np.average(y, weights=w)), 1e-8))
    m = np.zeros(p)
    v = np.zeros(p)
    b1, b2, eps = 0.9, 0.999, 1e-8
    wsum = float(np.sum(w))
    best_dev = np.inf
    best_beta = beta.copy()
    best_grad = np.inf
    checkpoint_dev = np.inf
    stall = 0
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        eta = X @ beta
        mu = _link_inv(link, eta)
        if link == "identity":
            mu = np.maximum(mu, 1e-10)
        grad = _deviance_gradient(loss, link, X, y, mu, eta, w, power) / wsum
        grad_norm = float(np.max(np.abs(grad)))
        dev = deviance(loss, y, mu, w, power) / wsum
        if dev < best_dev:
            best_dev, best_beta, best_grad = dev, beta.copy(), grad_norm
        if n_iter % 100 == 0:
            # stop once 100 iterations stop buying a meaningful improvement
            if checkpoint_dev - best_dev < 1e-6 * (0.1 + abs(best_dev)):
                stall += 1
                if stall >= 3 and n_iter > 300:
                    return best_beta, n_iter, best_grad, True
            else:
                stall = 0
            checkpoint_dev = best_dev
        if grad_norm < tol:
            return beta, n_iter, grad_norm, True
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad**2
        mh = m / (1.0 - b1**n_iter)
        vh = v / (1.0 - b2**n_iter)
        beta = beta - learning_rate * mh / (np.sqrt(vh) + eps)
    return best_beta, n_iter, best_grad, False


# ---------------------------------------------------------------------------
# estimators


class GLMRegressor(BaseEstimator, RegressorMixin):
    """GLM with gaussian, poisson, gamma, binomial or Tweedie loss.

    Parameters
    ----------
    loss : one of 'gaussian', 'poisson', 'gamma', 'binomial', 'tweedie'.
    link : 'identity', 'log' or 'logit'.
    power : Tweedie variance power, strictly inside (1, 2). Defaults to 1.5.
    max_iter, tol : optimizer budget and stopping tolerance.
    learning_rate : Adam step size, only used for the Tweedie loss.
    ridge : optional L2 stabilizer on the normal equations; 0 by default so
        rank deficiency raises instead of being hidden.
    """

    def __init__(
        self,
        loss="gaussian",
        link="identity",
        power=1.5,
        max_iter=200,
        tol=1e-9,
        learning_rate=0.01,
        ridge=0.0,
        fit_intercept=True,
    ):
        self.loss = loss
        self.link = link
        self.power = power
        self.max_iter = max_iter
        self.tol = tol
        self.learning_rate = learning_rate
        self.ridge = ridge
        self.fit_intercept = fit_intercept

    def _design(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if self.fit_intercept:
            return np.concatenate([np.ones((X.shape[0], 1)), X], axis=1)
        return X

    def fit(self, X, y, sample_weight=None):
        y = as_1d_floats(y, "y")
        require_finite(y, "y")
        _check_response(self.loss, y)
        if self.loss == "tweedie" and not 1.0 < self.power < 2.0:
            raise InvalidInput("tweedie power must lie strictly inside (1, 2)")
        Xd = self._design(X)
        require_finite(Xd, "X")
        if Xd.shape[0] != y.size:
            raise InvalidInput("X and y have mismatched lengths")
        w = (
            np.ones_like(y)
            if sample_weight is None
            else require_finite(as_1d_floats(sample_weight, "sample_weight"))
        )
        if np.any(w < 0):
            raise InvalidInput("sample_weight must be nonnegative")

        if self.loss == "tweedie":
            beta = self._fit_tweedie(Xd, y, w)
            n_iter = self._n_iter
        else:
            max_it = self.max_iter if self.loss != "binomial" else min(self.max_iter, 100)
            beta, dev, n_iter, grad_norm = _irls(
                Xd, y, w, self.loss, self.link, self.power, max_it, max(self.tol, 1e-12), self.ridge
            )
            self.gradient_norm_ = grad_norm
        eta = Xd @ beta
        mu = _link_inv(self.link, eta)
        self.deviance_ = deviance(self.loss, y, np.clip(mu, 1e-300, None) if self.link == "log" else mu, w, self.power)
        self.n_iter_ = n_iter
        if self.fit_intercept:
            self.intercept_ = float(beta[0])
            self.coef_ = beta[1:]
        else:
            self.intercept_ = 0.0
            self.coef_ = beta
        self.n_features_in_ = self.coef_.size
        return self

    def _fit_tweedie(self, Xd, y, w):
        # standardize non-constant columns so the fixed learning rate is
        # scale free; coefficients are mapped back afterwards
        mean = Xd.mean(axis=0)
        std = Xd.std(axis=0)
        const = std < 1e-12
        mean[const] = 0.0
        std[const] = 1.0
        if self.fit_intercept:
            mean[0], std[0] = 0.0, 1.0
        Xs = (Xd - mean) / std
        rank = np.linalg.matrix_rank(Xd) if Xd.shape[1] <= 200 else Xd.shape[1]
        if rank < Xd.shape[1] and self.ridge == 0.0:
            raise SingularDesign("design matrix is rank deficient; set ridge > 0 to proceed")
        beta_s, n_iter, grad_norm, converged = _adam(
            Xs, y, w, self.loss, self.link, self.power, self.max_iter, self.tol, self.learning_rate
        )
        self._n_iter = n_iter
        self.gradient_norm_ = grad_norm
        if not converged:
            raise ConvergenceError(
                f"tweedie descent did not converge in {self.max_iter} iterations",
                gradient_norm=grad_norm,
            )
        beta = beta_s / std
        if self.fit_intercept:
            beta[0] -= float(np.sum(beta_s[1:] * mean[1:] / std[1:]))
        return beta

    def predict(self, X):
        check_is_fitted(self, "coef_")
        Xd = self._design(X)
        if Xd.shape[1] != self.coef_.size + int(self.fit_intercept):
            raise InvalidInput("feature dimension mismatch")
        eta = self.intercept_ + Xd[:, 1 if self.fit_intercept else 0 :] @ self.coef_
        return _link_inv(self.link, eta)

    def deviance_of(self, X, y, sample_weight=None):
        mu = self.predict(X)
        return deviance(self.loss, np.asarray(y, float), mu, sample_weight, self.power)


@dataclass(frozen=True)
class LinearPredictor:
    """Linear prediction function over (protected..., non-protected...) inputs."""

    intercept: float
    coef: np.ndarray
    n_protected: int = 1
    feature_names: tuple = ()

    def __post_init__(self):
        coef = as_1d_floats(self.coef, "coef")
        require_finite(coef, "coef")
        object.__setattr__(self, "coef", coef)
        if not 0 <= self.n_protected <= coef.size:
            raise InvalidInput("n_protected must not exceed the coefficient count")
        if self.feature_names and len(self.feature_names) != coef.size:
            raise InvalidInput("feature_names must match the coefficient count")

    def predict(self, Z):
        Z = np.asarray(Z, dtype=float)
        return self.intercept + Z @ self.coef


def _covariate_row(d, x):
    d = np.atleast_1d(np.asarray(d, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.concatenate([d, x])


def predict(model, d, x):
    """Response-scale prediction g(d, x) with protected inputs first."""
    z = _covariate_row(d, x)
    if isinstance(model, LinearPredictor):
        if z.size != model.coef.size:
            raise InvalidInput("covariate dimension mismatch")
        return float(model.predict(z))
    if isinstance(model, GLMRegressor):
        return float(model.predict(z[None, :])[0])
    return float(model(z))


def partial_g(model, i, d, x, step=None):
    """Partial derivative of g with respect to covariate ``i``.

    Analytic for linear predictors and identity/log-link GLMs; central
    finite differences otherwise with step ``max(1e-6, 1e-6 |z_i|)``.
    """
    z = _covariate_row(d, x)
    if i < 0 or i >= z.size:
        raise InvalidInput(f"covariate index {i} out of range")
    if isinstance(model, GLMRegressor) and i in set(getattr(model, "onehot_columns", ())):
        raise InvalidInput(
            f"column {i} one-hot encodes a categorical level; use delta_g instead"
        )
    if isinstance(model, LinearPredictor):
        return float(model.coef[i])
    if isinstance(model, GLMRegressor):
        check_is_fitted(model, "coef_")
        if model.link == "identity":
            return float(model.coef_[i])
        if model.link == "log":
            return float(model.coef_[i]) * predict(model, d, x)
    h = step if step is not None else max(1e-6, 1e-6 * abs(z[i]))
    zp, zm = z.copy(), z.copy()
    zp[i] += h
    zm[i] -= h
    m = max(len(np.atleast_1d(d)), 0)
    return (predict(model, zp[:m], zp[m:]) - predict(model, zm[:m], zm[m:])) / (2.0 * h)


def derivative_method(model):
    """Name of the partial-derivative rule ``partial_g`` uses for ``model``."""
    if isinstance(model, LinearPredictor):
        return "analytic"
    if isinstance(model, GLMRegressor) and model.link in ("identity", "log"):
        return "analytic"
    return "finite_difference"


def delta_g(model, i, levels, d_minus_i, x, valid_levels=None):
    """Difference g(..., t_k, ...) - g(..., t_{k+1}, ...) in covariate ``i``."""
    t_k, t_k1 = levels
    if valid_levels is not None:
        known = set(np.asarray(valid_levels, dtype=float).tolist())
        if float(t_k) not in known or float(t_k1) not in known:
            raise InvalidInput(f"unknown level in {levels!r}")
    d_minus_i = np.atleast_1d(np.asarray(d_minus_i, dtype=float))
    d_lo = np.insert(d_minus_i, i, t_k)
    d_hi = np.insert(d_minus_i, i, t_k1)
    return predict(model, d_lo, x) - predict(model, d_hi, x)


def fit_glm(data, loss="tweedie", link="log", power=1.5, max_iter=None, tol=None,
            learning_rate=0.01, ridge=0.0):
    """Fit a GLM on an :class:`EncodedDataset`, honoring its exposure weights."""
    defaults = {"tweedie": (5000, 1e-6), "gaussian": (100, 1e-12)}
    it, t = defaults.get(loss, (200, 1e-10))
    model = GLMRegressor(
        loss=loss,
        link=link,
        power=power,
        max_iter=max_iter if max_iter is not None else it,
        tol=tol if tol is not None else t,
        learning_rate=learning_rate,
        ridge=ridge,
    )
    model.fit(data.matrix, data.response, sample_weight=data.exposure)
    model.onehot_columns = tuple(data.onehot_columns)
    return model


# ---------------------------------------------------------------------------
# dataset encoding


@dataclass(frozen=True)
class EncodedDataset:
    """Numeric design matrix with protected columns first."""

    matrix: np.ndarray
    response: np.ndarray
    exposure: np.ndarray | None
    feature_names: tuple
    protected_columns: tuple = ()
    onehot_columns: tuple = ()

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2:
            raise InvalidInput("matrix must be 2-dimensional")
        require_finite(m, "matrix")
        y = as_1d_floats(self.response, "response")
        require_finite(y, "response")
        if y.size != m.shape[0]:
            raise InvalidInput("response length must match the matrix")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "response", y)
        if self.exposure is not None:
            e = as_1d_floats(self.exposure, "exposure")
            require_finite(e, "exposure")
            if np.any(e <= 0):
                raise InvalidInput("exposure must be strictly positive where present")
            object.__setattr__(self, "exposure", e)


AGE_BIN_EDGES = (18, 28, 38, 48, 58, 68, 200)


class PortfolioEncoder(BaseEstimator):
    """One-hot encoder for the motor-portfolio schema.

    Categorical variables are expanded against an explicit reference level,
    driver age is binned into 10-year groups, and heavy-tailed monetary
    columns enter on the log scale. The protected column (Gender=Female)
    comes first in the encoded matrix.
    """

    def __init__(self, protected="Gender", protected_reference="Male",
                 age_bins=AGE_BIN_EDGES):
        self.protected = protected
        self.protected_reference = protected_reference
        self.age_bins = age_bins

    _categoricals = ("Type", "Category", "Occupation", "Group1", "Group2")

    def fit(self, frame, y=None):
        self.levels_ = {}
        for col in self._categoricals:
            self.levels_[col] = tuple(sorted(str(v) for v in set(frame[col])))
        self.protected_levels_ = tuple(sorted(str(v) for v in set(frame[self.protected])))
        if self.protected_reference not in self.protected_levels_:
            raise InvalidInput(
                f"reference level {self.protected_reference!r} absent from {self.protected}"
            )
        return self

    def feature_names(self):
        check_is_fitted(self, "levels_")
        names = [
            f"{self.protected}={lvl}"
            for lvl in self.protected_levels_
            if lvl != self.protected_reference
        ]
        edges = self.age_bins
        names += [f"Age=[{edges[i]},{edges[i + 1]})" for i in range(1, len(edges) - 1)]
        for col in self._categoricals:
            names += [f"{col}={lvl}" for lvl in self.levels_[col][1:]]
        names += ["Poldur", "logValue", "Adind", "logDensity"]
        return tuple(names)

    def transform(self, frame):
        check_is_fitted(self, "levels_")
        n = len(frame["Gender"])
        cols = []
        for lvl in self.protected_levels_:
            if lvl != self.protected_reference:
                cols.append(
                    np.fromiter(
                        (1.0 if str(v) == lvl else 0.0 for v in frame[self.protected]),
                        dtype=float,
                        count=n,
                    )
                )
        age = np.asarray(frame["Age"], dtype=float)
        edges = self.age_bins
        idx = np.clip(np.searchsorted(edges, age, side="right") - 1, 0, len(edges) - 2)
        for b in range(1, len(edges) - 1):
            cols.append((idx == b).astype(float))
        for col in self._categoricals:
            values = [str(v) for v in frame[col]]
            for lvl in self.levels_[col][1:]:
                cols.append(np.fromiter((1.0 if v == lvl else 0.0 for v in values), float, n))
        cols.append(np.asarray(frame["Poldur"], dtype=float) / 10.0)
        cols.append(np.log(np.asarray(frame["Value"], dtype=float)) - 9.0)
        cols.append(np.asarray(frame["Adind"], dtype=float))
        cols.append(np.log(np.asarray(frame["Density"], dtype=float)) - 4.0)
        return np.column_stack(cols)

    def to_dict(self):
        check_is_fitted(self, "levels_")
        return {
            "protected": self.protected,
            "protected_reference": self.protected_reference,
            "protected_levels": list(self.protected_levels_),
            "age_bins": list(self.age_bins),
            "levels": {col: list(lv) for col, lv in self.levels_.items()},
        }

    @classmethod
    def from_dict(cls, doc):
        enc = cls(protected=doc["protected"],
                  protected_reference=doc["protected_reference"],
                  age_bins=tuple(doc["age_bins"]))
        enc.levels_ = {col: tuple(lv) for col, lv in doc["levels"].items()}
        enc.protected_levels_ = tuple(doc["protected_levels"])
        return enc

    def encode_dataset(self, frame, response, exposure=None):
        matrix = self.transform(frame)
        names = self.feature_names()
        n_prot = len(self.protected_levels_) - 1
        onehot = tuple(i for i, nm in enumerate(names) if "=" in nm)
        return EncodedDataset(
            matrix=matrix,
            response=response,
            exposure=exposure,
            feature_names=names,
            protected_columns=tuple(range(n_prot)),
            onehot_columns=onehot,
        )


# ---------------------------------------------------------------------------
# versioned JSON model store


def model_to_json(model, diagnostics=None, encoding=None):
    """Serialize a fitted model to a byte-stable versioned JSON document.

    ``encoding`` optionally embeds the feature-encoding map (a fitted
    :class:`PortfolioEncoder`), so the document fully determines how raw
    rows map to the coefficient vector.
    """
    if isinstance(model, LinearPredictor):
        doc = {
            "version": MODEL_STORE_VERSION,
            "family": "linear",
            "intercept": model.intercept,
            "coef": list(map(float, model.coef)),
            "n_protected": model.n_protected,
            "feature_names": list(model.feature_names),
        }
    elif isinstance(model, GLMRegressor):
        check_is_fitted(model, "coef_")
        doc = {
            "version": MODEL_STORE_VERSION,
            "family": "glm",
            "loss": model.loss,
            "link": model.link,
            "power": model.power,
            "intercept": model.intercept_,
            "coef": list(map(float, model.coef_)),
            "onehot_columns": list(getattr(model, "onehot_columns", ())),
            "diagnostics": {
                "deviance": getattr(model, "deviance_", None),
                "n_iter": getattr(model, "n_iter_", None),
                "gradient_norm": getattr(model, "gradient_norm_", None),
            },
        }
    else:
        raise InvalidInput(f"cannot serialize model of type {type(model).__name__}")
    if encoding is not None:
        doc["encoding"] = encoding.to_dict()
    if diagnostics:
        doc.setdefault("diagnostics", {}).update(diagnostics)
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def model_from_json(text):
    doc = json.loads(text)
    if doc.get("version") != MODEL_STORE_VERSION:
        raise InvalidInput(f"unsupported model-store version {doc.get('version')!r}")
    if doc["family"] == "linear":
        return LinearPredictor(
            intercept=doc["intercept"],
            coef=np.array(doc["coef"], dtype=float),
            n_protected=doc["n_protected"],
            feature_names=tuple(doc["feature_names"]),
        )
    if doc["family"] == "glm":
        model = GLMRegressor(loss=doc["loss"], link=doc["link"], power=doc["power"])
        model.coef_ = np.array(doc["coef"], dtype=float)
        model.intercept_ = float(doc["intercept"])
        model.n_features_in_ = model.coef_.size
        model.onehot_columns = tuple(doc.get("onehot_columns", ()))
        diag = doc.get("diagnostics", {})
        model.deviance_ = diag.get("deviance")
        model.n_iter_ = diag.get("n_iter")
        model.gradient_norm_ = diag.get("gradient_norm")
        return model
    raise InvalidInput(f"unknown model family {doc['family']!r}")
