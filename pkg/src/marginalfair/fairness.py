"""Fairness-adjusted decision rules for distortion risk measures.

The adjusted rule subtracts from the base decision a correction built from
three conditional ingredients: the sensitivity (numerator), the second
moment of the perturbation score (denominator), and the covariation of the
outcome with the score (cross term). All three use the same variant score,
which is what makes the residual sensitivity of the adjusted rule vanish
and the construction the L2-closest fair reweighting.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .conditional import GaussianBackend
from .distortion import WeightFunction
from .errors import (
    DegenerateDenominator,
    IllConditionedWarning,
    InvalidInput,
    NoFairRule,
)
from .oracle import fd_sensitivity
from .predictors import LinearPredictor
from .sensitivity import GaussianLinearScenario, mc_conditional

__all__ = [
    "FairRule",
    "MultiFairRule",
    "DecisionPoint",
    "fair_rule",
    "fair_rule_from_scenario",
    "fair_weight",
    "adjusted_weight_function",
    "multi_marginal_rule",
    "strategies",
    "linear_ev_fair_closed_form",
    "cascade_fair_closed_form",
    "residual_oracle",
]

DENOMINATOR_FLOOR = 1e-8


@dataclass(frozen=True)
class FairRule:
    """Adjusted decision at one query point, with its audit trail."""

    value: float
    base_value: float
    sensitivity: float
    denominator: float
    cross_term: float
    correction: float
    protected_index: int
    variant: str
    weight_label: str
    method: str
    se: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.correction):
            raise InvalidInput("fair-rule correction must be finite")


@dataclass(frozen=True)
class MultiFairRule:
    value: float
    base_value: float
    eta: np.ndarray
    sensitivities: np.ndarray
    cross_terms: np.ndarray
    gram: np.ndarray
    residuals: np.ndarray
    variant: str
    weight_label: str
    method: str


@dataclass(frozen=True)
class DecisionPoint:
    """The four comparison strategies at one query point."""

    p_unaware: float
    p_discrimination_free: float
    p_fair_ev: float
    p_fair_es: float
    adjustment_ev: float
    adjustment_es: float
    es_level: float


def _check_denominator(denom):
    if denom <= DENOMINATOR_FLOOR:
        raise DegenerateDenominator(
            f"score second moment {denom:.3e} is at or below the floor "
            f"{DENOMINATOR_FLOOR:.0e}; the protected attribute has no effect "
            "through the prediction function"
        )


def fair_rule_from_scenario(scenario, x, rho: WeightFunction, attr=0, variant="marginal",
                            method="auto", n_draws=100_000, seed=0) -> FairRule:
    """Construct the adjusted decision at ``x`` for one protected attribute."""
    if method != "mc" and getattr(scenario, "analytic", False):
        est = scenario.analytic_estimate(rho, x, [attr], variant)
        denom = float(est["denom"][0, 0])
        _check_denominator(denom)
        sens = float(est["sens"][0])
        cross = float(est["cross"][0])
        correction = sens / denom * cross
        return FairRule(
            value=est["rho"] - correction,
            base_value=est["rho"],
            sensitivity=sens,
            denominator=denom,
            cross_term=cross,
            correction=correction,
            protected_index=attr,
            variant=variant,
            weight_label=rho.label,
            method="analytic",
        )
    est = mc_conditional(scenario, x, rho, attrs=(attr,), variant=variant,
                         n_draws=n_draws, seed=seed)
    denom = float(est.denom[0, 0])
    _check_denominator(denom)
    sens = float(est.sens[0])
    cross = float(est.cross[0])
    correction = sens / denom * cross
    return FairRule(
        value=est.rho - correction,
        base_value=est.rho,
        sensitivity=sens,
        denominator=denom,
        cross_term=cross,
        correction=correction,
        protected_index=attr,
        variant=variant,
        weight_label=rho.label,
        method="mc",
        se=est.fair_se,
        metadata={"n_draws": n_draws, "seed": seed},
    )


def fair_rule(model, backend, rho, i, x, sensitivity_variant="marginal", *,
              noise_sd=0.0, method="auto", n_draws=100_000, seed=0) -> FairRule:
    """Adjusted decision for a linear model with a Gaussian backend."""
    scenario = GaussianLinearScenario(model, backend, noise_sd=noise_sd)
    return fair_rule_from_scenario(
        scenario, x, rho, attr=i, variant=sensitivity_variant,
        method=method, n_draws=n_draws, seed=seed,
    )


def fair_weight(scenario, x, rho: WeightFunction, attr=0, variant="marginal",
                n_draws=100_000, seed=0):
    """Per-draw adjusted weights gamma*(U) = gamma(U) - eta Z.

    Returns ``(u, gamma_star, rule)``; averaging ``y * gamma_star`` over the
    same draws reproduces ``rule.value`` to float roundoff.
    """
    est = mc_conditional(scenario, x, rho, attrs=(attr,), variant=variant,
                         n_draws=n_draws, seed=seed, keep_draws=True)
    denom = float(est.denom[0, 0])
    _check_denominator(denom)
    eta = float(est.sens[0]) / denom
    gamma_star = est.draws["gamma"] - eta * est.draws["scores"][:, 0]
    correction = eta * float(est.cross[0])
    rule = FairRule(
        value=est.rho - correction,
        base_value=est.rho,
        sensitivity=float(est.sens[0]),
        denominator=denom,
        cross_term=float(est.cross[0]),
        correction=correction,
        protected_index=attr,
        variant=variant,
        weight_label=rho.label,
        method="mc",
        se=est.fair_se,
        metadata={"n_draws": n_draws, "seed": seed, "sens_se": float(est.sens_se[0])},
    )
    return est.draws["u"], gamma_star, rule


def adjusted_weight_function(u, gamma_star, label="adjusted") -> WeightFunction:
    """Tabulate per-draw adjusted weights into a reusable weight function.

    The grid sits at the sorted rank positions (j - 1/2) / n, so tied ranks
    (outcome atoms) spread their common weight across the atom's whole
    cumulative-probability block instead of collapsing to one node; the
    result behaves like the empirical step weight with 1/n-wide ramps.
    """
    u = np.asarray(u, dtype=float)
    g = np.asarray(gamma_star, dtype=float)
    if u.size < 2:
        raise InvalidInput("need at least two draws to tabulate a weight")
    order = np.argsort(u, kind="stable")
    pos = (np.arange(u.size) + 0.5) / u.size
    return WeightFunction.tabulated(pos, g[order], label=label)


def multi_marginal_rule(scenario, x, rho: WeightFunction, attrs, variant="marginal",
                        method="auto", n_draws=100_000, seed=0,
                        cond_limit=1e12) -> MultiFairRule:
    """Joint correction for several protected attributes.

    Solves the Gram system of pairwise score products for the multipliers;
    a singular system means no fair rule exists, and a condition number
    past ``cond_limit`` raises an ill-conditioning warning. Entries are
    estimated on common draws so Monte Carlo noise cannot fabricate
    singularity.
    """
    attrs = tuple(attrs)
    if method != "mc" and getattr(scenario, "analytic", False):
        est = scenario.analytic_estimate(rho, x, list(attrs), variant)
        rho_val, sens, gram, cross = est["rho"], est["sens"], est["denom"], est["cross"]
        se_method = "analytic"
    else:
        mc = mc_conditional(scenario, x, rho, attrs=attrs, variant=variant,
                            n_draws=n_draws, seed=seed)
        rho_val, sens, gram, cross = mc.rho, mc.sens, mc.denom, mc.cross
        se_method = "mc"
    if np.any(np.diag(gram) <= DENOMINATOR_FLOOR):
        raise DegenerateDenominator("a protected attribute has no effect through g")
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond):
        raise NoFairRule("constraint system is singular; no multi-marginal fair rule")
    if cond > cond_limit:
        warnings.warn(
            f"constraint system condition number {cond:.3e} exceeds {cond_limit:.0e}",
            IllConditionedWarning,
        )
    try:
        eta = np.linalg.solve(gram, sens)
    except np.linalg.LinAlgError:
        raise NoFairRule("constraint system is singular; no multi-marginal fair rule")
    residuals = sens - gram @ eta
    value = float(rho_val - eta @ cross)
    return MultiFairRule(
        value=value,
        base_value=float(rho_val),
        eta=np.asarray(eta, dtype=float),
        sensitivities=np.asarray(sens, dtype=float),
        cross_terms=np.asarray(cross, dtype=float),
        gram=np.asarray(gram, dtype=float),
        residuals=np.asarray(residuals, dtype=float),
        variant=variant,
        weight_label=rho.label,
        method=se_method,
    )


def strategies(model, backend, x, es_level=0.95, *, noise_sd=0.0, method="auto",
               n_draws=100_000, seed=0) -> DecisionPoint:
    """The four comparison strategies at one query point.

    Unaware marginalizes D given X = x; discrimination-free averages the
    unconditional law of D; the fair decisions adjust the expected value
    and the expected shortfall at ``es_level``.
    """
    scenario = GaussianLinearScenario(model, backend, noise_sd=noise_sd)
    ev = WeightFunction.expected_value()
    es = WeightFunction.expected_shortfall(es_level)
    p_u = scenario.unaware_value(x)
    p_df = scenario.discrimination_free_value(x)

    def _fair(gamma):
        # when the protected attribute has no effect through g, the base
        # measure already is the fair decision (with a warning)
        try:
            rule = fair_rule_from_scenario(scenario, x, gamma, method=method,
                                           n_draws=n_draws, seed=seed)
            return rule.value, rule.base_value
        except DegenerateDenominator:
            warnings.warn(
                "protected attribute has no effect through g; decision left unadjusted",
                UserWarning,
            )
            est = scenario.analytic_estimate(gamma, x, [0], "marginal")
            return est["rho"], est["rho"]

    fair_ev, _ = _fair(ev)
    fair_es, base_es = _fair(es)
    return DecisionPoint(
        p_unaware=p_u,
        p_discrimination_free=p_df,
        p_fair_ev=fair_ev,
        p_fair_es=fair_es,
        adjustment_ev=p_u - fair_ev,
        adjustment_es=base_es - fair_es,
        es_level=es_level,
    )


def linear_ev_fair_closed_form(x, backend: GaussianBackend, model: LinearPredictor):
    """Closed-form fair expected value for the linear-Gaussian pair:
    (beta_0 + beta_1 x)(1 - c_x) with c_x = E[D|x]^2 / E[D^2|x]."""
    if backend.n_protected != 1:
        raise InvalidInput("closed form covers a single protected attribute")
    m = float(backend.conditional_mean(x)[0])
    q = float(backend.conditional_cov()[0, 0]) + m**2
    c_x = m**2 / q
    beta0 = model.intercept
    beta1 = float(model.coef[1])
    return (beta0 + beta1 * float(x)) * (1.0 - c_x)


def cascade_fair_closed_form(x, backend, model, causal_mask=frozenset()):
    """Closed-form cascade-fair expected value for the linear-Gaussian pair.

    The cascade score is (beta_2 + beta_1 tau sigma_X / sigma_D) D, which is
    collinear with the dependence-held-fixed score beta_2 D, so the
    correction coincides with the marginal one and the rule reduces to
    (beta_0 + beta_1 x)(1 - c_x) whenever the combined slope is nonzero.
    """
    if not isinstance(backend, GaussianBackend):
        raise InvalidInput("cascade closed form requires a Gaussian backend")
    if not isinstance(model, LinearPredictor) or backend.n_protected != 1:
        raise InvalidInput("cascade closed form covers the linear bivariate case")
    beta2 = float(model.coef[0])
    beta1 = float(model.coef[1])
    slope = 0.0 if "x" in causal_mask else backend.slope_x_given_d(0)
    direction = beta2 + beta1 * slope
    if abs(direction) < 1e-12:
        raise DegenerateDenominator("combined cascade slope vanishes")
    return linear_ev_fair_closed_form(x, backend, model)


def residual_oracle(scenario, x, weight_fn: WeightFunction, attr=0, variant="marginal",
                    delta=1e-3, n_draws=100_000, seed=1234, family=None):
    """Finite-difference sensitivity of a (possibly adjusted) weight function.

    Drives the scenario's own perturbation family on common random numbers;
    for a correctly adjusted weight the estimate is zero up to Monte Carlo
    error. ``family`` selects a non-default perturbation family where the
    scenario offers one (discrete transport vs. linearized).
    """

    def simulate(rng, n, d):
        draws = scenario.sample(rng, n, x)
        return scenario.outcome(draws, x, delta=d, attr=attr, variant=variant, family=family)

    return fd_sensitivity(simulate, weight_fn, delta, n_draws, seed)


def multi_residual_oracle(scenario, x, rho: WeightFunction, eta, attrs, perturbed,
                          variant="marginal", delta=1e-3, n_draws=100_000, seed=1234,
                          n_batches=20):
    """Finite-difference sensitivity of a multi-attribute adjusted rule.

    The adjusted rule subtracts eta_l E[Y Z_l | X] from the base measure;
    its weight depends on the draws through the scores, so the functional
    is differenced directly: base part through the perturbed ranks, cross
    parts with scores held at their unperturbed values (common random
    numbers drive both branches).
    """
    from .sensitivity import midrank_cdf

    eta = np.asarray(eta, dtype=float)
    attrs = tuple(attrs)

    def stat(rng, d):
        draws = scenario.sample(rng, n_draws, x)
        z = scenario.scores(draws, x, attrs=attrs, variant=variant)
        y = scenario.outcome(draws, x, delta=d, attr=perturbed, variant=variant)
        g = np.asarray(rho(midrank_cdf(y)), dtype=float)
        contrib = y * g - (y[:, None] * z) @ eta
        batch = np.arange(n_draws) % n_batches
        sums = np.bincount(batch, weights=contrib, minlength=n_batches)
        counts = np.bincount(batch, minlength=n_batches)
        return contrib.mean(), sums, counts

    full_p, sums_p, counts = stat(np.random.default_rng(seed), +delta)
    full_m, sums_m, _ = stat(np.random.default_rng(seed), -delta)
    estimate = (full_p - full_m) / (2.0 * delta)
    total_p, total_m, total_n = sums_p.sum(), sums_m.sum(), counts.sum()
    loo = np.empty(n_batches)
    for b in range(n_batches):
        mp = (total_p - sums_p[b]) / (total_n - counts[b])
        mm = (total_m - sums_m[b]) / (total_n - counts[b])
        loo[b] = (mp - mm) / (2.0 * delta)
    se = float(np.sqrt((n_batches - 1) / n_batches * np.sum((loo - loo.mean()) ** 2)))
    from .oracle import FdEstimate

    return FdEstimate(estimate=float(estimate), standard_error=se, delta=delta,
                      n_draws=n_draws, seed=seed)
