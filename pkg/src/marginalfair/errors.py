"""Exception and warning types shared across the package."""


class InvalidInput(ValueError):
    """Raised when an argument violates a documented precondition."""


class ConvergenceError(RuntimeError):
    """Optimizer exhausted its iteration budget before reaching tolerance.

    Carries the last gradient norm so callers can judge how far off the
    fit is.
    """

    def __init__(self, message, gradient_norm=None):
        super().__init__(message)
        self.gradient_norm = gradient_norm


class SingularDesign(RuntimeError):
    """Design matrix is rank deficient and no ridge was configured."""


class EstimationError(RuntimeError):
    """A conditional estimate could not be produced (e.g. too few draws)."""


class NumericalError(RuntimeError):
    """A numerical operation failed (support violation, non-differentiable
    point, ...)."""


class DegenerateDenominator(RuntimeError):
    """The protected attribute has no effect through the prediction
    function, so the fairness correction is undefined."""


class NoFairRule(RuntimeError):
    """The multi-attribute constraint system is singular; no fair rule."""


class TooFewExceedances(RuntimeError):
    """Not enough tail observations to fit a conditional tail model."""


class IllConditionedWarning(UserWarning):
    """Constraint system condition number exceeds the configured bound."""


class MergedBinsWarning(UserWarning):
    """Requested more quantile bins than distinct predictions."""


class TailFallbackWarning(UserWarning):
    """Conditional tail fit fell back to the unconditional tail mean."""


class SignApproximationWarning(UserWarning):
    """A signed target was fitted on its absolute value with the dominant
    sign reattached."""
