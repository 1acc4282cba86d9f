"""Weight functions and distortion risk measures on finite samples.

A risk measure here is represented through its weight function ``gamma``
acting on quantile levels: the measure of a sample is the integral of the
left-continuous empirical quantile function against ``gamma`` over (0, 1).
Integration is exact for step quantiles: the quantile is piecewise
constant between cumulative-weight breakpoints and ``gamma`` has a closed
form antiderivative for every supported kind (linear interpolation between
grid nodes for tabulated weights).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from ._validation import as_1d_floats, check_unit_open, require_finite
from .errors import InvalidInput

__all__ = [
    "WeightFunction",
    "EmpiricalDistribution",
    "RiskDecomposition",
    "quantile",
    "evaluate",
    "decompose",
    "load_tabulated_csv",
]


@dataclass(frozen=True)
class WeightFunction:
    """Quantile-level weight ``gamma`` of a generalized distortion risk measure.

    Supported kinds:

    - ``expected_value``: gamma(u) = 1.
    - ``expected_shortfall``: gamma(u) = 1{u >= alpha} / (1 - alpha).
    - ``tabulated``: gamma linearly interpolated between (u, gamma) grid
      nodes, held constant beyond the first/last node so the full (0, 1)
      interval is covered.
    """

    kind: str
    alpha: float | None = None
    grid_u: np.ndarray | None = None
    grid_gamma: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("expected_value", "expected_shortfall", "tabulated"):
            raise InvalidInput(f"unknown weight-function kind {self.kind!r}")
        if self.kind == "expected_shortfall":
            if self.alpha is None or not 0.0 <= self.alpha < 1.0:
                raise InvalidInput("expected_shortfall level must lie in [0, 1)")
        if self.kind == "tabulated":
            u = as_1d_floats(self.grid_u, "grid_u")
            g = as_1d_floats(self.grid_gamma, "grid_gamma")
            if u.shape != g.shape or u.size < 2:
                raise InvalidInput("tabulated grid needs >= 2 matching (u, gamma) pairs")
            check_unit_open(u, "grid_u")
            require_finite(g, "grid_gamma")
            if np.any(np.diff(u) <= 0):
                raise InvalidInput("grid_u must be strictly increasing")
            sq = np.trapezoid(g**2, u)
            if not np.isfinite(sq):
                raise InvalidInput("tabulated gamma is not square integrable on its grid")
            object.__setattr__(self, "grid_u", u)
            object.__setattr__(self, "grid_gamma", g)
        if not self.label:
            object.__setattr__(self, "label", self._default_label())

    def _default_label(self):
        if self.kind == "expected_value":
            return "ev"
        if self.kind == "expected_shortfall":
            return f"es{self.alpha:g}"
        return "tabulated"

    @classmethod
    def expected_value(cls, label="ev"):
        return cls(kind="expected_value", label=label)

    @classmethod
    def expected_shortfall(cls, alpha, label=""):
        return cls(kind="expected_shortfall", alpha=float(alpha), label=label)

    @classmethod
    def tabulated(cls, grid_u, grid_gamma, label="tabulated"):
        return cls(
            kind="tabulated",
            grid_u=np.asarray(grid_u, dtype=float),
            grid_gamma=np.asarray(grid_gamma, dtype=float),
            label=label,
        )

    def __call__(self, u):
        """Evaluate gamma at quantile levels ``u`` in (0, 1)."""
        u = np.asarray(u, dtype=float)
        if self.kind == "expected_value":
            return np.ones_like(u)
        if self.kind == "expected_shortfall":
            return np.where(u >= self.alpha, 1.0 / (1.0 - self.alpha), 0.0)
        return np.interp(u, self.grid_u, self.grid_gamma)

    def cumulative(self, u):
        """Antiderivative ``G(u) = \\int_0^u gamma(t) dt``, exact per kind."""
        u = np.asarray(u, dtype=float)
        if self.kind == "expected_value":
            return u.copy()
        if self.kind == "expected_shortfall":
            return np.maximum(0.0, u - self.alpha) / (1.0 - self.alpha)
        return self._tabulated_cumulative(u)

    def _tabulated_cumulative(self, u):
        gu, gg = self.grid_u, self.grid_gamma
        # prefix integrals at the grid nodes; constant extension below gu[0]
        seg = 0.5 * (gg[1:] + gg[:-1]) * np.diff(gu)
        prefix = np.concatenate([[gg[0] * gu[0]], gg[0] * gu[0] + np.cumsum(seg)])
        idx = np.searchsorted(gu, u, side="right")
        out = np.empty_like(u)
        below = idx == 0
        above = idx == gu.size
        mid = ~below & ~above
        out[below] = gg[0] * u[below]
        out[above] = prefix[-1] + gg[-1] * (u[above] - gu[-1])
        if np.any(mid):
            i = idx[mid] - 1
            du = u[mid] - gu[i]
            slope = (gg[i + 1] - gg[i]) / (gu[i + 1] - gu[i])
            out[mid] = prefix[i] + gg[i] * du + 0.5 * slope * du**2
        return out

    def integral(self):
        """Total mass ``\\int_0^1 gamma(u) du`` (1 for classical measures)."""
        return float(self.cumulative(np.array([1.0]))[0])

    def normal_score_integral(self):
        """``\\int_0^1 Phi^{-1}(u) gamma(u) du``, closed form per kind.

        This is the risk measure of a standard normal variable net of its
        mean, which the analytic Gaussian engine relies on.
        """
        if self.kind == "expected_value":
            return 0.0
        if self.kind == "expected_shortfall":
            if self.alpha == 0.0:
                return 0.0
            z = norm.ppf(self.alpha)
            return float(norm.pdf(z) / (1.0 - self.alpha))
        return self._tabulated_normal_score()

    def _tabulated_normal_score(self):
        # Piecewise-linear gamma: on each segment gamma(u) = a + b u and
        #   int (a + b u) Phi^{-1}(u) du = -a phi(z) + b (Phi(z sqrt 2)/(2 sqrt pi) - u phi(z))
        # with z = Phi^{-1}(u); both antiderivatives are exact.
        def anti(a, b, u):
            z = norm.ppf(u)
            pdf = norm.pdf(z)
            return -a * pdf + b * (norm.cdf(z * np.sqrt(2.0)) / (2.0 * np.sqrt(np.pi)) - u * pdf)

        gu, gg = self.grid_u, self.grid_gamma
        total = anti(gg[0], 0.0, gu[0]) - anti(gg[0], 0.0, 1e-300)
        slope = (gg[1:] - gg[:-1]) / (gu[1:] - gu[:-1])
        a = gg[:-1] - slope * gu[:-1]
        total += float(np.sum(anti(a, slope, gu[1:]) - anti(a, slope, gu[:-1])))
        total += anti(gg[-1], 0.0, 1.0 - 1e-16) - anti(gg[-1], 0.0, gu[-1])
        return float(total)


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Finite carrier of an outcome distribution: sorted values, weights.

    Weights default to uniform; when present they must be nonnegative and
    sum to one within 1e-12.
    """

    values: np.ndarray
    weights: np.ndarray | None = None
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vals = as_1d_floats(self.values, "values")
        require_finite(vals, "values")
        if np.any(np.diff(vals) < 0):
            raise InvalidInput("values must be sorted ascending")
        object.__setattr__(self, "values", vals)
        if self.weights is not None:
            w = as_1d_floats(self.weights, "weights")
            require_finite(w, "weights")
            if w.shape != vals.shape:
                raise InvalidInput("weights must match values in length")
            if np.any(w < 0):
                raise InvalidInput("weights must be nonnegative")
            if abs(w.sum() - 1.0) > 1e-12:
                raise InvalidInput("weights must sum to 1 within 1e-12")
            object.__setattr__(self, "weights", w)
            cum = np.cumsum(w)
        else:
            n = vals.size
            cum = np.arange(1, n + 1, dtype=float) / n
        cum[-1] = 1.0
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def from_samples(cls, values, weights=None):
        """Build from unsorted draws, sorting values (and weights) jointly."""
        vals = as_1d_floats(values, "values")
        if weights is None:
            return cls(values=np.sort(vals))
        w = as_1d_floats(weights, "weights")
        order = np.argsort(vals, kind="stable")
        return cls(values=vals[order], weights=w[order])

    def mean(self):
        if self.weights is None:
            return float(self.values.mean())
        return float(self.values @ self.weights)

    @property
    def cumulative_weights(self):
        return self._cum


@dataclass(frozen=True)
class RiskDecomposition:
    """Split of a risk measure into expected value plus risk margin."""

    total: float
    expectation: float
    margin: float


def quantile(dist: EmpiricalDistribution, u) -> float | np.ndarray:
    """Left-continuous generalized inverse of the weighted empirical cdf.

    Returns ``inf{y : F(y) >= u}`` for ``u`` in (0, 1).
    """
    uarr = check_unit_open(np.asarray(u, dtype=float), "u")
    idx = np.searchsorted(dist.cumulative_weights, uarr, side="left")
    out = dist.values[np.minimum(idx, dist.values.size - 1)]
    if np.isscalar(u) or np.asarray(u).ndim == 0:
        return float(out)
    return out


def evaluate(rho: WeightFunction, dist: EmpiricalDistribution) -> float:
    """Integrate the step quantile function against ``rho`` exactly.

    Equals ``sum_i values_i * (G(c_i) - G(c_{i-1}))`` where ``c_i`` are the
    cumulative weights and ``G`` the antiderivative of the weight function.
    """
    cum = dist.cumulative_weights
    g_cum = rho.cumulative(cum)
    increments = np.diff(np.concatenate([[0.0], g_cum]))
    return float(dist.values @ increments)


def decompose(rho: WeightFunction, dist: EmpiricalDistribution) -> RiskDecomposition:
    """Split ``evaluate(rho, dist)`` into mean plus margin.

    The margin integrates the centered weight ``gamma - 1`` directly, so the
    identity ``total = expectation + margin`` holds to float roundoff.
    """
    cum = dist.cumulative_weights
    g_cum = rho.cumulative(cum)
    increments = np.diff(np.concatenate([[0.0], g_cum]))
    total = float(dist.values @ increments)
    expectation = dist.mean()
    margin_increments = increments - np.diff(np.concatenate([[0.0], cum]))
    margin = float(dist.values @ margin_increments)
    return RiskDecomposition(total=total, expectation=expectation, margin=margin)


def load_tabulated_csv(path, label=None) -> WeightFunction:
    """Load a tabulated weight function from a two-column (u, gamma) CSV.

    A header row is required; ``u`` must be strictly increasing in (0, 1).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise InvalidInput("weight-function CSV needs a (u, gamma) header row")
        try:
            float(header[0])
        except ValueError:
            pass
        else:
            raise InvalidInput("weight-function CSV is missing its header row")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    if not rows:
        raise InvalidInput("weight-function CSV has no data rows")
    u, g = zip(*rows)
    name = label if label is not None else "tabulated"
    return WeightFunction.tabulated(np.array(u), np.array(g), label=name)
