"""Differential sensitivities of risk-based decisions to protected attributes.

Every sensitivity here is the conditional expectation of a per-draw
"score" times the weight function evaluated at the outcome's conditional
rank: scores are D_i dg/dD_i for unbounded continuous attributes,
phi(Phi^{-1}(F(D))) / f(D) dg/dD_i for compact support, and level-shift
sums v_k Delta_k g 1{D = t_k} for discrete attributes; cascade variants add
the indirect terms through dependent covariates. The same scores feed the
fairness corrections, so estimation lives in one engine shared by both.

Scenario objects encapsulate the conditional law of (D, Y) given X = x and
how a perturbation of size delta deforms it; the finite-difference oracle
differentiates exactly the same family the scores represent.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .conditional import GaussianBackend, cond_class_prob
from .distortion import WeightFunction
from .errors import EstimationError, InvalidInput, NumericalError
from .perturbation import (
    CascadeSpec,
    ProtectedSpec,
    compact_shift_family,
    discrete_levels_from_u,
)
from .predictors import GLMRegressor, LinearPredictor, delta_g

__all__ = [
    "v_weights",
    "midrank_cdf",
    "GaussianLinearScenario",
    "IndependentScenario",
    "CascadeScenario",
    "Example32Scenario",
    "ConditionalEstimate",
    "mc_conditional",
    "marginal_continuous",
    "marginal_compact",
    "marginal_discrete",
    "cascade",
    "example32_check",
    "SensitivityReport",
]

MIN_CONDITIONAL_DRAWS = 1000


def v_weights(spec: ProtectedSpec):
    """Level-shift weights v_k = -Phi^{-1}(p_k) phi(Phi^{-1}(p_k)), k < K."""
    if spec.kind != "discrete":
        raise InvalidInput("v_weights requires a discrete spec")
    p = np.asarray(spec.cum_masses[:-1], dtype=float)
    z = norm.ppf(p)
    return -z * norm.pdf(z)


def midrank_cdf(y):
    """Plug-in cdf values with mid-rank tie handling (ties get the average
    of the left and right cdf limits)."""
    y = np.asarray(y, dtype=float)
    n = y.size
    sorted_y = np.sort(y)
    left = np.searchsorted(sorted_y, y, side="left")
    right = np.searchsorted(sorted_y, y, side="right")
    return (left + right) / (2.0 * n)


# ---------------------------------------------------------------------------
# vectorized model access


def _predict_matrix(model, Z):
    if isinstance(model, LinearPredictor):
        return model.predict(Z)
    if isinstance(model, GLMRegressor):
        return model.predict(Z)
    return np.asarray(model(Z), dtype=float)


def _partial_matrix(model, i, Z):
    if isinstance(model, LinearPredictor):
        return np.full(Z.shape[0], float(model.coef[i]))
    if isinstance(model, GLMRegressor) and model.link == "log":
        return float(model.coef_[i]) * model.predict(Z)
    if isinstance(model, GLMRegressor) and model.link == "identity":
        return np.full(Z.shape[0], float(model.coef_[i]))
    h = max(1e-6, 1e-6 * float(np.max(np.abs(Z[:, i]))) if Z.size else 1e-6)
    Zp, Zm = Z.copy(), Z.copy()
    Zp[:, i] += h
    Zm[:, i] -= h
    return (_predict_matrix(model, Zp) - _predict_matrix(model, Zm)) / (2.0 * h)


def _rows(d, x, n):
    """Stack covariate rows (protected first, then the fixed x block)."""
    d = np.asarray(d, dtype=float)
    if d.ndim == 1:
        d = d[:, None]
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    return np.concatenate([d, np.tile(xa, (n, 1))], axis=1)


# ---------------------------------------------------------------------------
# scenarios


class GaussianLinearScenario:
    """Linear outcome with jointly normal covariates, conditioned on X = x.

    Supports any number of protected attributes with a scalar non-protected
    covariate, analytic moments for every weight function, and both the
    dependence-held-fixed and cascade perturbations.
    """

    def __init__(self, model: LinearPredictor, backend: GaussianBackend,
                 noise_sd=0.0, causal_mask=frozenset()):
        if not isinstance(model, LinearPredictor):
            raise InvalidInput("GaussianLinearScenario needs a linear prediction function")
        m = backend.n_protected
        if model.coef.size != m + 1:
            raise InvalidInput("model must have one coefficient per protected attribute plus x")
        self.model = model
        self.backend = backend
        self.noise_sd = float(noise_sd)
        self.causal_mask = frozenset(causal_mask)
        self.m = m
        self.beta_d = model.coef[:m]
        self.beta_x = float(model.coef[m])

    analytic = True

    def sample(self, rng, n, x):
        d = self.backend.sample_d(rng, n, x)
        eps = self.noise_sd * rng.standard_normal(n) if self.noise_sd > 0 else np.zeros(n)
        return {"d": d, "eps": eps}

    def outcome(self, draws, x, delta=0.0, attr=None, variant="marginal", family=None):
        d = draws["d"]
        x_eff = float(x)
        if delta != 0.0:
            d = d.copy()
            shift = d[:, attr] * delta
            d[:, attr] = d[:, attr] * (1.0 + delta)
            if variant == "cascade":
                for k in range(self.m):
                    if k != attr and k not in self.causal_mask:
                        d[:, k] = d[:, k] + self.backend.slope_d_given_d(k, attr) * shift
                if "x" not in self.causal_mask:
                    x_eff = x + self.backend.slope_x_given_d(attr) * shift
        return (self.model.intercept + self.beta_x * x_eff + d @ self.beta_d
                + draws["eps"])

    def _direction(self, attr, variant):
        a = float(self.beta_d[attr])
        if variant == "cascade":
            for k in range(self.m):
                if k != attr and k not in self.causal_mask:
                    a += float(self.beta_d[k]) * self.backend.slope_d_given_d(k, attr)
            if "x" not in self.causal_mask:
                a += self.beta_x * self.backend.slope_x_given_d(attr)
        return a

    def scores(self, draws, x, attrs, variant="marginal"):
        d = draws["d"]
        cols = [d[:, l] * self._direction(l, variant) for l in attrs]
        return np.column_stack(cols)

    # -- closed forms ----------------------------------------------------

    def conditional_y_moments(self, x):
        m = self.backend.conditional_mean(x)
        cov = self.backend.conditional_cov()
        mu_y = self.model.intercept + self.beta_x * float(x) + float(self.beta_d @ m)
        var_y = float(self.beta_d @ cov @ self.beta_d) + self.noise_sd**2
        cov_dy = cov @ self.beta_d
        return m, cov, mu_y, np.sqrt(var_y), cov_dy

    def analytic_estimate(self, gamma: WeightFunction, x, attrs, variant="marginal"):
        """Exact rho, sensitivities, score Gram matrix and cross terms."""
        m, cov, mu_y, sd_y, cov_dy = self.conditional_y_moments(x)
        i0 = gamma.integral()
        i1 = gamma.normal_score_integral()
        # a degenerate conditional outcome is a point mass: every classical
        # measure of it is the point itself and rank weights average out
        rho = mu_y * i0 + sd_y * i1
        a = np.array([self._direction(l, variant) for l in attrs])
        idx = np.asarray(attrs, dtype=int)
        e_d_gamma = m[idx] * i0 + (cov_dy[idx] / sd_y if sd_y > 0 else 0.0 * cov_dy[idx]) * i1
        sens = a * e_d_gamma
        second = cov[np.ix_(idx, idx)] + np.outer(m[idx], m[idx])
        denom = np.outer(a, a) * second
        cross = a * (mu_y * m[idx] + cov_dy[idx])
        return {"rho": float(rho), "sens": sens, "denom": denom, "cross": cross}

    def unaware_value(self, x):
        m = self.backend.conditional_mean(x)
        return self.model.intercept + self.beta_x * float(x) + float(self.beta_d @ m)

    def discrimination_free_value(self, x):
        return (self.model.intercept + self.beta_x * float(x)
                + float(self.beta_d @ self.backend.mu_d))


class IndependentScenario:
    """Protected attribute independent of X, arbitrary prediction function.

    Handles compact and discrete protected kinds; the conditional law of D
    given any x is the spec's law. Perturbations use the families whose
    derivatives the sensitivity formulas realize (latent shift for compact
    support, mass-proportional cuts for discrete levels).
    """

    analytic = False

    def __init__(self, model, spec: ProtectedSpec, noise_sd=0.0):
        if spec.kind not in ("compact", "discrete"):
            raise InvalidInput("IndependentScenario covers compact and discrete kinds")
        self.model = model
        self.spec = spec
        self.noise_sd = float(noise_sd)
        self.m = 1

    def sample(self, rng, n, x):
        u = np.clip(rng.random(n), 1e-15, 1.0 - 1e-16)
        eps = self.noise_sd * rng.standard_normal(n) if self.noise_sd > 0 else np.zeros(n)
        return {"u": u, "eps": eps}

    def _draw_d(self, u, delta):
        if self.spec.kind == "compact":
            if delta == 0.0:
                return self.spec.quantile_fn(u)
            return compact_shift_family(u, delta, self.spec)
        return discrete_levels_from_u(u, delta, self.spec, family="mass_proportional")

    def outcome(self, draws, x, delta=0.0, attr=0, variant="marginal", family=None):
        """Perturbed outcome draws.

        For discrete attributes the default family is the value-space
        linearization y + delta * z, whose derivative is exactly the
        level-shift sensitivity sum for every weight function; ``family=
        "cut"`` instead transports draws across levels (mass-proportional
        cut movement), which realizes the same derivative for the expected
        value but not for tail weights, where level jumps are finite.
        """
        if self.spec.kind == "discrete" and delta != 0.0 and family != "cut":
            d0 = self._draw_d(draws["u"], 0.0)
            y0 = _predict_matrix(self.model, _rows(d0, x, d0.size)) + draws["eps"]
            return y0 + delta * self.scores(draws, x)[:, 0]
        d = self._draw_d(draws["u"], delta)
        n = d.size
        return _predict_matrix(self.model, _rows(d, x, n)) + draws["eps"]

    def scores(self, draws, x, attrs=(0,), variant="marginal"):
        u = draws["u"]
        n = u.size
        d = self._draw_d(u, 0.0)
        if self.spec.kind == "compact":
            dens = np.asarray(self.spec.pdf(d), dtype=float)
            if np.any(dens <= 0) or np.any(~np.isfinite(dens)):
                raise NumericalError("density vanished at a sampled point (support violation)")
            ratio = norm.pdf(norm.ppf(u)) / dens
            z = ratio * _partial_matrix(self.model, 0, _rows(d, x, n))
            return z[:, None]
        # discrete: sum_k v_k Delta_k g 1{D = t_k}; with one protected
        # attribute Delta_k g depends only on x, so compute it per level
        vk = v_weights(self.spec)
        levels = self.spec.levels
        z = np.zeros(n)
        for k in range(len(levels) - 1):
            dg = delta_g(self.model, 0, (levels[k], levels[k + 1]), [], x)
            z += vk[k] * dg * (d == levels[k])
        return z[:, None]


class CascadeScenario:
    """Protected attribute with covariates generated from it, unconditional.

    Covariates follow the cascade spec's conditional quantile factors; the
    model consumes (d, covariates...) rows. Used to exercise the cascade
    sensitivity formulas for compact and discrete attributes against the
    finite-difference oracle.
    """

    analytic = False

    def __init__(self, model, cascade_spec: CascadeSpec, noise_sd=0.0):
        self.model = model
        self.spec = cascade_spec
        self.prot = cascade_spec.protected
        self.names = cascade_spec.covariates()
        self.noise_sd = float(noise_sd)
        self.m = 1

    def sample(self, rng, n, x):
        u = np.clip(rng.random(n), 1e-15, 1.0 - 1e-16)
        v = np.clip(rng.random((n, len(self.names))), 1e-15, 1.0 - 1e-16)
        eps = self.noise_sd * rng.standard_normal(n) if self.noise_sd > 0 else np.zeros(n)
        return {"u": u, "v": v, "eps": eps}

    def _draw_d(self, u, delta):
        if self.prot.kind == "compact":
            if delta == 0.0:
                return self.prot.quantile_fn(u)
            return compact_shift_family(u, delta, self.prot)
        if self.prot.kind == "discrete":
            return discrete_levels_from_u(u, delta, self.prot, family="mass_proportional")
        d0 = self.prot.quantile_fn(u)
        return d0 * (1.0 + delta)

    def _covariates(self, v, t_pert, t_orig):
        cols = []
        for j, name in enumerate(self.names):
            cond = self.spec.conditionals[name]
            t = t_orig if name in self.spec.causal_mask else t_pert
            cols.append(np.asarray(cond.quantile(v[:, j], t), dtype=float))
        return np.column_stack(cols)

    def outcome(self, draws, x, delta=0.0, attr=0, variant="cascade", family=None):
        if self.prot.kind == "discrete" and delta != 0.0 and family != "cut":
            d0 = self._draw_d(draws["u"], 0.0)
            X0 = self._covariates(draws["v"], d0, d0)
            y0 = _predict_matrix(self.model, np.concatenate([d0[:, None], X0], axis=1))
            return y0 + draws["eps"] + delta * self.scores(draws, x, variant=variant)[:, 0]
        d0 = self._draw_d(draws["u"], 0.0)
        d = self._draw_d(draws["u"], delta) if delta != 0.0 else d0
        t_pert = d if variant == "cascade" else d0
        X = self._covariates(draws["v"], t_pert, d0)
        Z = np.concatenate([d[:, None], X], axis=1)
        return _predict_matrix(self.model, Z) + draws["eps"]

    def scores(self, draws, x, attrs=(0,), variant="cascade"):
        u, v = draws["u"], draws["v"]
        n = u.size
        d0 = self._draw_d(u, 0.0)
        X0 = self._covariates(v, d0, d0)
        Z0 = np.concatenate([d0[:, None], X0], axis=1)
        unmasked = [j for j, nm in enumerate(self.names) if nm not in self.spec.causal_mask]

        if self.prot.kind in ("continuous", "compact"):
            total = _partial_matrix(self.model, 0, Z0)
            if variant == "cascade":
                for j in unmasked:
                    cond = self.spec.conditionals[self.names[j]]
                    slope = np.asarray(cond.slope(v[:, j], d0), dtype=float)
                    total = total + _partial_matrix(self.model, 1 + j, Z0) * slope
            if self.prot.kind == "continuous":
                weight = d0
            else:
                dens = np.asarray(self.prot.pdf(d0), dtype=float)
                if np.any(dens <= 0):
                    raise NumericalError("density vanished at a sampled point")
                weight = norm.pdf(norm.ppf(u)) / dens
            return (weight * total)[:, None]

        # discrete cascade: per level-transition k, the direct difference in
        # d plus, per unmasked covariate, the difference with that covariate
        # regenerated at the two levels (all else at observed values)
        vk = v_weights(self.prot)
        levels = self.prot.levels
        z = np.zeros(n)
        for k in range(len(levels) - 1):
            ind = d0 == levels[k]
            if not np.any(ind):
                continue
            lo, hi = Z0.copy(), Z0.copy()
            lo[:, 0] = levels[k]
            hi[:, 0] = levels[k + 1]
            total = _predict_matrix(self.model, lo) - _predict_matrix(self.model, hi)
            if variant == "cascade":
                for j in unmasked:
                    cond = self.spec.conditionals[self.names[j]]
                    lo, hi = Z0.copy(), Z0.copy()
                    lo[:, 1 + j] = np.asarray(
                        cond.quantile(v[:, j], np.full(n, levels[k])), dtype=float
                    )
                    hi[:, 1 + j] = np.asarray(
                        cond.quantile(v[:, j], np.full(n, levels[k + 1])), dtype=float
                    )
                    total = total + _predict_matrix(self.model, lo) - _predict_matrix(self.model, hi)
            z += vk[k] * np.where(ind, total, 0.0)
        return z[:, None]


class Example32Scenario:
    """Outcome switching between a bounded protected part and a tail part.

    Y equals D on {X1 = 0} and the constant x2 on {X1 = 1}; the protected
    attribute only matters below the 1-p quantile, so tail-focused decision
    rules are insensitive to it. The decision rule here is unconditional.
    """

    analytic = False

    def __init__(self, p, c=0.5, x2=2.0):
        if not 0.0 < p < 1.0:
            raise InvalidInput("p must lie in (0, 1)")
        if x2 <= c:
            raise InvalidInput("x2 must exceed c")
        self.p = float(p)
        self.c = float(c)
        self.x2 = float(x2)
        self.m = 1

    def sample(self, rng, n, x=None):
        return {
            "d": self.c * rng.random(n),
            "x1": (rng.random(n) < self.p).astype(float),
        }

    def outcome(self, draws, x=None, delta=0.0, attr=0, variant="marginal", family=None):
        d = draws["d"] * (1.0 + delta)
        return np.where(draws["x1"] == 0.0, d, self.x2)

    def scores(self, draws, x=None, attrs=(0,), variant="marginal"):
        z = np.where(draws["x1"] == 0.0, draws["d"], 0.0)
        return z[:, None]


# ---------------------------------------------------------------------------
# Monte Carlo engine


@dataclass(frozen=True)
class ConditionalEstimate:
    """Per-query-point plug-in estimates of every fair-rule ingredient."""

    rho: float
    rho_se: float
    sens: np.ndarray
    sens_se: np.ndarray
    cross: np.ndarray
    denom: np.ndarray
    fair: float
    fair_se: float
    eta: np.ndarray
    n_draws: int
    seed: int
    variant: str
    method: str = "mc"
    draws: dict | None = field(default=None, compare=False, repr=False)


def _batch_means(values, batch_idx, n_batches):
    """Per-batch means of a 1-d array."""
    sums = np.bincount(batch_idx, weights=values, minlength=n_batches)
    counts = np.bincount(batch_idx, minlength=n_batches)
    return sums / counts


def mc_conditional(scenario, x, gamma, attrs=(0,), variant="marginal",
                   n_draws=100_000, seed=0, n_batches=20, keep_draws=False):
    """Estimate rho, sensitivities and fair-rule ingredients at X = x.

    Standard errors come from per-batch replicates of each statistic;
    conditional ranks are computed once on the full sample.
    """
    if n_draws < MIN_CONDITIONAL_DRAWS:
        raise EstimationError(
            f"conditional sample of {n_draws} draws is below the configured "
            f"minimum of {MIN_CONDITIONAL_DRAWS}"
        )
    rng = np.random.default_rng(seed)
    draws = scenario.sample(rng, n_draws, x)
    y = scenario.outcome(draws, x)
    z = scenario.scores(draws, x, attrs=tuple(attrs), variant=variant)
    u = midrank_cdf(y)
    g = np.asarray(gamma(u), dtype=float)
    k = z.shape[1]

    batch_idx = np.arange(n_draws) % n_batches
    rho_b = _batch_means(y * g, batch_idx, n_batches)
    sens_b = np.stack([_batch_means(z[:, j] * g, batch_idx, n_batches) for j in range(k)])
    cross_b = np.stack([_batch_means(y * z[:, j], batch_idx, n_batches) for j in range(k)])
    denom_b = np.stack([
        np.stack([_batch_means(z[:, i] * z[:, j], batch_idx, n_batches) for j in range(k)])
        for i in range(k)
    ])  # (k, k, B)

    rho = float(np.mean(y * g))
    sens = (z * g[:, None]).mean(axis=0)
    cross = (y[:, None] * z).mean(axis=0)
    denom = (z.T @ z) / n_draws

    eta, *_ = np.linalg.lstsq(denom, sens, rcond=None)
    fair = rho - float(eta @ cross)
    fair_b = np.empty(n_batches)
    for b in range(n_batches):
        eta_b, *_ = np.linalg.lstsq(denom_b[:, :, b], sens_b[:, b], rcond=None)
        fair_b[b] = rho_b[b] - float(eta_b @ cross_b[:, b])

    def _se(reps):
        return float(np.std(reps, ddof=1) / np.sqrt(n_batches))

    kept = None
    if keep_draws:
        kept = {"y": y, "u": u, "gamma": g, "scores": z}
    return ConditionalEstimate(
        rho=rho,
        rho_se=_se(rho_b),
        sens=sens,
        sens_se=np.array([_se(sens_b[j]) for j in range(k)]),
        cross=cross,
        denom=denom,
        fair=fair,
        fair_se=_se(fair_b),
        eta=np.asarray(eta, dtype=float),
        n_draws=n_draws,
        seed=seed,
        variant=variant,
        draws=kept,
    )


# ---------------------------------------------------------------------------
# public operations


def _gaussian_linear(model, backend, noise_sd, causal_mask=frozenset()):
    return GaussianLinearScenario(model, backend, noise_sd=noise_sd, causal_mask=causal_mask)


def marginal_continuous(model, backend, rho, i, x, *, noise_sd=0.0, method="auto",
                        n_draws=100_000, seed=0):
    """Sensitivity E[D_i dg/dD_i gamma(U_{Y|X}) | X = x] under the
    proportional perturbation, dependence held fixed."""
    scenario = _gaussian_linear(model, backend, noise_sd)
    if method != "mc" and scenario.analytic:
        est = scenario.analytic_estimate(rho, x, [i], "marginal")
        return float(est["sens"][0])
    est = mc_conditional(scenario, x, rho, attrs=(i,), n_draws=n_draws, seed=seed)
    return float(est.sens[0])


def marginal_compact(model, backend, rho, i, x, spec: ProtectedSpec, *,
                     noise_sd=0.0, n_draws=100_000, seed=0):
    """Compact-support sensitivity with the density-ratio weight."""
    if spec.kind != "compact":
        raise InvalidInput("marginal_compact requires a compact spec")
    if backend is not None:
        raise InvalidInput("compact sensitivities assume D independent of X here")
    scenario = IndependentScenario(model, spec, noise_sd=noise_sd)
    est = mc_conditional(scenario, x, rho, n_draws=n_draws, seed=seed)
    return float(est.sens[0])


def marginal_discrete(model, backend, rho, i, x, spec: ProtectedSpec, *,
                      noise_sd=0.0, n_draws=100_000, seed=0):
    """Discrete sensitivity sum_k v_k E[Delta_k g 1{D=t_k} gamma(U) | X=x].

    With a class-probability backend and the expected-value weight the sum
    is computed in closed form from the fitted probabilities; otherwise it
    is estimated by simulation with D independent of X.
    """
    if spec.kind != "discrete":
        raise InvalidInput("marginal_discrete requires a discrete spec")
    if backend is not None:
        if rho.kind != "expected_value":
            raise InvalidInput("class-probability backends support the expected value here")
        vk = v_weights(spec)
        total = 0.0
        for k in range(len(spec.levels) - 1):
            dg = delta_g(model, i, (spec.levels[k], spec.levels[k + 1]), [], x)
            if isinstance(backend, dict):
                prob = float(backend[spec.levels[k]])
            else:
                prob = cond_class_prob(backend, spec.levels[k], x)
            total += vk[k] * dg * prob
        return float(total)
    scenario = IndependentScenario(model, spec, noise_sd=noise_sd)
    est = mc_conditional(scenario, x, rho, n_draws=n_draws, seed=seed)
    return float(est.sens[0])


def cascade(model, backend, rho, i, x, *, cascade_spec=None, variant="continuous",
            noise_sd=0.0, method="auto", n_draws=100_000, seed=0):
    """Cascade sensitivity: direct term plus indirect terms through the
    covariates' conditional quantiles; masked covariates contribute zero."""
    if variant == "continuous" and isinstance(backend, GaussianBackend) and isinstance(
        model, LinearPredictor
    ):
        mask = cascade_spec.causal_mask if cascade_spec is not None else frozenset()
        scenario = _gaussian_linear(model, backend, noise_sd, causal_mask=mask)
        if method != "mc":
            est = scenario.analytic_estimate(rho, x, [i], "cascade")
            return float(est["sens"][0])
        est = mc_conditional(scenario, x, rho, attrs=(i,), variant="cascade",
                             n_draws=n_draws, seed=seed)
        return float(est.sens[0])
    if cascade_spec is None:
        raise InvalidInput("cascade sensitivities need a cascade spec")
    scenario = CascadeScenario(model, cascade_spec, noise_sd=noise_sd)
    est = mc_conditional(scenario, x, rho, variant="cascade", n_draws=n_draws, seed=seed)
    return float(est.sens[0])


def example32_check(p, alpha, n_draws=100_000, seed=0, c=0.5, x2=2.0, return_se=False):
    """Plug-in unconditional expected-shortfall sensitivity of the
    switching example; zero whenever alpha > 1 - p."""
    scenario = Example32Scenario(p, c=c, x2=x2)
    rho = WeightFunction.expected_shortfall(alpha)
    est = mc_conditional(scenario, None, rho, n_draws=n_draws, seed=seed)
    if return_se:
        return float(est.sens[0]), float(est.sens_se[0])
    return float(est.sens[0])


# ---------------------------------------------------------------------------
# reporting


@dataclass(frozen=True)
class SensitivityReport:
    """Per-query-point sensitivities with estimator metadata."""

    x: np.ndarray
    values: np.ndarray
    se: np.ndarray
    method: str
    protected_index: int
    weight_label: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise InvalidInput("sensitivity values must be finite")
        if vals.size != np.asarray(self.x).shape[0]:
            raise InvalidInput("one value per query point required")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "value", "se", "method"])
            for xi, v, s in zip(np.asarray(self.x), self.values, self.se):
                writer.writerow([
                    format(float(np.atleast_1d(xi)[0]), ".12g"),
                    format(float(v), ".12g"),
                    format(float(s), ".12g"),
                    self.method,
                ])

    def write_json(self, path):
        doc = {
            "method": self.method,
            "protected_index": self.protected_index,
            "weight_label": self.weight_label,
            "metadata": self.metadata,
            "points": [
                {
                    "x": float(np.atleast_1d(xi)[0]),
                    "value": float(v),
                    "se": float(s),
                }
                for xi, v, s in zip(np.asarray(self.x), self.values, self.se)
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=2)
            fh.write("\n")
