"""Marginally fair decision rules for generalized distortion risk measures."""

from .distortion import (
    EmpiricalDistribution,
    RiskDecomposition,
    WeightFunction,
    decompose,
    evaluate,
    quantile,
)
from .perturbation import (
    CascadeSpec,
    ProtectedSpec,
    cascade_sample,
    perturb_compact,
    perturb_continuous,
    perturb_discrete_mass,
)
from .predictors import GLMRegressor, LinearPredictor, delta_g, fit_glm, partial_g, predict
from .conditional import GaussianBackend, RegressionBackend
from .sensitivity import (
    SensitivityReport,
    cascade,
    example32_check,
    marginal_compact,
    marginal_continuous,
    marginal_discrete,
    v_weights,
)
from .fairness import (
    DecisionPoint,
    FairRule,
    fair_rule,
    fair_weight,
    multi_marginal_rule,
    strategies,
)
from .oracle import deviance_oracle, example32_quantile, fd_sensitivity

__version__ = "0.1.0"
