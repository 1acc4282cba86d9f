"""Perturbation schemes per protected-attribute kind, plus cascade propagation.

Unbounded continuous attributes are perturbed proportionally. Bounded and
discrete attributes are perturbed through the latent standard normal that
generates them, which keeps the support intact and only distorts
probabilities. Cascade propagation pushes a perturbation of the protected
attribute through dependent covariates via their conditional quantile
functions (the inverse-Rosenblatt factors).

Two latent families appear. The public maps (`perturb_compact`,
`perturb_discrete_mass`) scale the latent normal by (1 + delta); they drive
cascade sampling. The sensitivity formulas in :mod:`marginalfair.sensitivity`
correspond to slightly different families (a latent shift for compact
support, block-mass-proportional threshold movement for discrete levels),
exposed here as the ``*_sensitivity_family`` helpers so finite-difference
oracles can differentiate exactly the functional the formulas represent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from ._validation import as_1d_floats, check_unit_open, require_finite
from .errors import InvalidInput, NumericalError

__all__ = [
    "ProtectedSpec",
    "CascadeSpec",
    "EmpiricalConditionalQuantile",
    "perturb_continuous",
    "perturb_compact",
    "perturb_discrete_mass",
    "compact_shift_family",
    "discrete_cut_family",
    "discrete_levels_from_u",
    "cascade_sample",
    "cond_quantile_slope",
    "load_conditional_quantile_csv",
]


@dataclass(frozen=True)
class ProtectedSpec:
    """Distributional declaration of one protected attribute.

    ``kind`` selects the perturbation scheme: ``continuous`` (unbounded,
    proportional), ``compact`` (bounded with cdf/density accessors) or
    ``discrete`` (ordered levels with cumulative masses ending at 1).
    """

    kind: str
    support: tuple | None = None
    cdf: object = None
    pdf: object = None
    quantile: object = None
    levels: tuple = ()
    cum_masses: tuple = ()

    def __post_init__(self):
        if self.kind not in ("continuous", "compact", "discrete"):
            raise InvalidInput(f"unknown protected kind {self.kind!r}")
        if self.kind == "compact":
            if self.support is None or self.cdf is None or self.pdf is None:
                raise InvalidInput("compact spec needs support, cdf and pdf accessors")
            a, b = self.support
            if not a < b:
                raise InvalidInput("compact support must satisfy a < b")
        if self.kind == "discrete":
            levels = tuple(float(t) for t in self.levels)
            masses = tuple(float(p) for p in self.cum_masses)
            if len(levels) != len(masses) or len(levels) < 2:
                raise InvalidInput("discrete spec needs >= 2 levels with cumulative masses")
            if len(set(levels)) != len(levels):
                raise InvalidInput("discrete levels must be distinct")
            if np.any(np.diff(masses) <= 0) or not np.isclose(masses[-1], 1.0, atol=1e-12):
                raise InvalidInput("cumulative masses must increase strictly to 1")
            if masses[0] <= 0:
                raise InvalidInput("cumulative masses must be positive")
            object.__setattr__(self, "levels", levels)
            object.__setattr__(self, "cum_masses", masses)

    @classmethod
    def continuous(cls, quantile=None):
        return cls(kind="continuous", quantile=quantile)

    @classmethod
    def compact(cls, cdf, pdf, support, quantile=None):
        return cls(kind="compact", cdf=cdf, pdf=pdf, support=tuple(support), quantile=quantile)

    @classmethod
    def from_scipy(cls, dist, support=None):
        """Compact spec from a frozen scipy distribution with bounded support."""
        if support is None:
            support = dist.support()
        a, b = float(support[0]), float(support[1])
        if not (np.isfinite(a) and np.isfinite(b)):
            raise InvalidInput("from_scipy requires a bounded support")
        return cls.compact(cdf=dist.cdf, pdf=dist.pdf, support=(a, b), quantile=dist.ppf)

    @classmethod
    def discrete(cls, levels, probabilities=None, cum_masses=None):
        if (probabilities is None) == (cum_masses is None):
            raise InvalidInput("pass exactly one of probabilities or cum_masses")
        if probabilities is not None:
            probs = as_1d_floats(probabilities, "probabilities")
            if np.any(probs <= 0) or not np.isclose(probs.sum(), 1.0, atol=1e-12):
                raise InvalidInput("probabilities must be positive and sum to 1")
            cum_masses = np.cumsum(probs)
        return cls(kind="discrete", levels=tuple(levels), cum_masses=tuple(cum_masses))

    # -- accessors -----------------------------------------------------

    def quantile_fn(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "discrete":
            return self.level_from_u(u)
        if self.quantile is not None:
            return np.asarray(self.quantile(u), dtype=float)
        if self.kind != "compact":
            raise InvalidInput("continuous spec without a quantile accessor")
        return self._bisect_quantile(u)

    def _bisect_quantile(self, u):
        a, b = self.support
        lo = np.full_like(u, float(a))
        hi = np.full_like(u, float(b))
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            below = np.asarray(self.cdf(mid), dtype=float) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def level_from_u(self, u, cuts=None):
        """Map latent uniforms to levels: t_k on (p_{k-1}, p_k]."""
        if self.kind != "discrete":
            raise InvalidInput("level_from_u applies to discrete specs")
        cuts = np.asarray(self.cum_masses if cuts is None else cuts, dtype=float)
        idx = np.searchsorted(cuts, np.asarray(u, dtype=float), side="left")
        idx = np.minimum(idx, len(self.levels) - 1)
        return np.asarray(self.levels, dtype=float)[idx]

    def block_masses(self):
        if self.kind != "discrete":
            raise InvalidInput("block_masses applies to discrete specs")
        return np.diff(np.concatenate([[0.0], np.asarray(self.cum_masses)]))


def perturb_continuous(d, delta):
    """Proportional perturbation d (1 + delta); identity at delta = 0."""
    if delta <= -1.0:
        raise InvalidInput("delta must exceed -1")
    return np.asarray(d, dtype=float) * (1.0 + delta)


def perturb_compact(u, delta, spec: ProtectedSpec):
    """Latent-scale perturbation F^{-1}(Phi(Phi^{-1}(u) (1 + delta))).

    Keeps the support of the attribute; only probabilities are distorted.
    """
    if spec.kind != "compact":
        raise InvalidInput("perturb_compact requires a compact spec")
    if delta <= -1.0:
        raise InvalidInput("delta must exceed -1")
    u = check_unit_open(u, "u")
    return spec.quantile_fn(norm.cdf(norm.ppf(u) * (1.0 + delta)))


def compact_shift_family(u, delta, spec: ProtectedSpec):
    """Latent-shift perturbation F^{-1}(Phi(Phi^{-1}(u) + delta)).

    This is the family whose derivative at delta = 0 equals the
    compact-support sensitivity weight phi(Phi^{-1}(F(d))) / f(d), so
    finite-difference oracles for that formula must perturb through it.
    """
    if spec.kind != "compact":
        raise InvalidInput("compact_shift_family requires a compact spec")
    u = check_unit_open(u, "u")
    return spec.quantile_fn(norm.cdf(norm.ppf(u) + delta))


def perturb_discrete_mass(p, delta):
    """Distorted cumulative mass Phi(Phi^{-1}(p) / (1 + delta)).

    Fixes 0, 1/2 and 1; for a Bernoulli success mass p this reproduces
    1 - Phi(Phi^{-1}(1-p) / (1+delta)) by symmetry.
    """
    if delta <= -1.0:
        raise InvalidInput("delta must exceed -1")
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise InvalidInput("p must lie in [0, 1]")
    interior = (p > 0) & (p < 1)
    out = p.astype(float).copy()
    out[interior] = norm.cdf(norm.ppf(p[interior]) / (1.0 + delta))
    if np.isscalar(p) or np.asarray(p).ndim == 0:
        return float(out)
    return out


def discrete_cut_family(spec: ProtectedSpec, delta):
    """Cumulative cuts moved proportionally to each block's mass.

    Cut k moves by (Phi(Phi^{-1}(p_k)/(1+delta)) - p_k) * (p_k - p_{k-1});
    the derivative of expectations under this family is exactly the
    level-shift sensitivity sum with weights v_k = -Phi^{-1}(p_k) phi(...)
    times the conditional level probabilities.
    """
    p = np.asarray(spec.cum_masses, dtype=float)
    moved = p + (perturb_discrete_mass(p, delta) - p) * spec.block_masses()
    if np.any(np.diff(moved) <= 0):
        raise NumericalError("perturbed cumulative cuts are no longer increasing")
    moved[-1] = 1.0
    return moved


def discrete_levels_from_u(u, delta, spec: ProtectedSpec, family="scale"):
    """Draw levels from latent uniforms under a perturbed cut family."""
    if spec.kind != "discrete":
        raise InvalidInput("discrete_levels_from_u requires a discrete spec")
    if family == "scale":
        cuts = perturb_discrete_mass(np.asarray(spec.cum_masses), delta)
        cuts[-1] = 1.0
    elif family == "mass_proportional":
        cuts = discrete_cut_family(spec, delta)
    else:
        raise InvalidInput(f"unknown discrete perturbation family {family!r}")
    return spec.level_from_u(u, cuts=cuts)


# ---------------------------------------------------------------------------
# cascade propagation


class EmpiricalConditionalQuantile:
    """Binned conditional quantile table with bilinear interpolation.

    The conditioning variable is cut into equal-count bins; each bin stores
    a quantile curve on a fixed v-grid. Queries interpolate linearly in v
    and across bin centers in t.
    """

    def __init__(self, bin_centers, v_grid, table, bin_edges=None):
        self.bin_centers = as_1d_floats(bin_centers, "bin_centers")
        self.v_grid = as_1d_floats(v_grid, "v_grid")
        self.table = np.asarray(table, dtype=float)
        self.bin_edges = bin_edges
        if self.table.shape != (self.bin_centers.size, self.v_grid.size):
            raise InvalidInput("table shape must be (n_bins, n_v)")
        require_finite(self.table, "table")
        if np.any(np.diff(self.table, axis=1) < -1e-9):
            raise InvalidInput("conditional quantiles must be nondecreasing in v")

    @classmethod
    def from_samples(cls, t_samples, x_samples, n_bins=50, n_v=101):
        t = as_1d_floats(t_samples, "t_samples")
        x = as_1d_floats(x_samples, "x_samples")
        if t.size != x.size or t.size < n_bins * 4:
            raise InvalidInput("need matched samples, several per bin")
        order = np.argsort(t, kind="stable")
        t, x = t[order], x[order]
        edges_idx = np.linspace(0, t.size, n_bins + 1).astype(int)
        v_grid = np.linspace(0.005, 0.995, n_v)
        centers, rows, edges = [], [], []
        for b in range(n_bins):
            sl = slice(edges_idx[b], edges_idx[b + 1])
            centers.append(t[sl].mean())
            rows.append(np.quantile(x[sl], v_grid))
            edges.append((t[sl][0], t[sl][-1]))
        return cls(np.array(centers), v_grid, np.array(rows), bin_edges=edges)

    def quantile(self, v, t):
        v = np.asarray(v, dtype=float)
        t = np.asarray(t, dtype=float)
        # interpolate along v within each bracketing bin, then linearly in t
        j = np.clip(np.searchsorted(self.bin_centers, t) - 1, 0, self.bin_centers.size - 2)
        t0, t1 = self.bin_centers[j], self.bin_centers[j + 1]
        w = np.clip((t - t0) / np.where(t1 > t0, t1 - t0, 1.0), 0.0, 1.0)
        iv = np.clip(np.searchsorted(self.v_grid, v) - 1, 0, self.v_grid.size - 2)
        v0, v1 = self.v_grid[iv], self.v_grid[iv + 1]
        wv = np.clip((v - v0) / (v1 - v0), 0.0, 1.0)
        q_lo = self.table[j, iv] * (1 - wv) + self.table[j, iv + 1] * wv
        q_hi = self.table[j + 1, iv] * (1 - wv) + self.table[j + 1, iv + 1] * wv
        return q_lo * (1 - w) + q_hi * w

    def slope(self, v, t, step=None):
        # the step must span a few bins, else the difference picks up the
        # per-bin estimation noise instead of the trend
        scale = float(self.bin_centers[-1] - self.bin_centers[0])
        spacing = float(np.median(np.diff(self.bin_centers)))
        h = step if step is not None else max(1e-3 * scale, 4.0 * spacing)
        hi = self.quantile(v, np.asarray(t) + h)
        lo = self.quantile(v, np.asarray(t) - h)
        out = (hi - lo) / (2.0 * h)
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"conditional quantile not differentiable near t={t}")
        return out


@dataclass(frozen=True)
class GaussianConditional:
    """Analytic Gaussian conditional quantile: mu + slope (t - mu_t) + sd z."""

    mu: float
    slope_dt: float
    sd: float
    mu_t: float = 0.0

    def quantile(self, v, t):
        return self.mu + self.slope_dt * (np.asarray(t) - self.mu_t) + self.sd * norm.ppf(v)

    def slope(self, v, t, step=None):
        return np.broadcast_to(self.slope_dt, np.broadcast_shapes(np.shape(v), np.shape(t))).copy()


@dataclass(frozen=True)
class CallableConditional:
    """Conditional quantile given as a callable (v, t) -> x, slope by FD."""

    fn: object
    slope_fn: object = None
    scale: float = 1.0

    def quantile(self, v, t):
        return np.asarray(self.fn(v, t), dtype=float)

    def slope(self, v, t, step=None):
        if self.slope_fn is not None:
            return np.asarray(self.slope_fn(v, t), dtype=float)
        h = step if step is not None else max(1e-3 * self.scale, 1e-9)
        out = (self.quantile(v, np.asarray(t) + h) - self.quantile(v, np.asarray(t) - h)) / (2 * h)
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"conditional quantile not differentiable near t={t}")
        return out


@dataclass(frozen=True)
class CascadeSpec:
    """Inverse-Rosenblatt factors for propagating a protected perturbation.

    ``conditionals`` maps each propagated covariate name to a conditional
    quantile representation (Gaussian, empirical table, or callable), all
    conditioned on the protected attribute. ``causal_mask`` lists covariates
    excluded from propagation (they keep their unperturbed values).
    """

    protected: ProtectedSpec
    conditionals: dict = field(default_factory=dict)
    causal_mask: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "causal_mask", frozenset(self.causal_mask))

    def covariates(self):
        return tuple(self.conditionals)


def cond_quantile_slope(spec: CascadeSpec, covariate, v, t):
    """Slope (d/dt) of the conditional quantile of ``covariate`` given D = t."""
    try:
        conditional = spec.conditionals[covariate]
    except KeyError:
        raise InvalidInput(f"no conditional quantile registered for {covariate!r}")
    return conditional.slope(v, t)


def cascade_sample(spec: CascadeSpec, u, v, delta=0.0):
    """Propagate a protected perturbation through the dependent covariates.

    ``u`` holds latent uniforms generating the protected attribute, ``v`` a
    (n, n_covariates) array of independent uniforms for the conditional
    quantile factors. Returns ``(d_delta, X)`` where masked covariates are
    evaluated at the unperturbed protected value, so ``delta = 0``
    reproduces the original vector exactly.
    """
    u = check_unit_open(np.atleast_1d(u), "u")
    prot = spec.protected
    names = spec.covariates()
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape != (u.size, len(names)):
        raise InvalidInput("v must have one column per propagated covariate")
    if prot.kind == "discrete":
        d0 = prot.level_from_u(u)
        d_delta = discrete_levels_from_u(u, delta, prot, family="scale")
    elif prot.kind == "compact":
        d0 = spec.protected.quantile_fn(u)
        d_delta = perturb_compact(u, delta, prot)
    else:
        d0 = prot.quantile_fn(u)
        d_delta = perturb_continuous(d0, delta)
    cols = []
    for j, name in enumerate(names):
        cond = spec.conditionals[name]
        t = d0 if name in spec.causal_mask else d_delta
        cols.append(np.asarray(cond.quantile(v[:, j], t), dtype=float))
    return d_delta, np.column_stack(cols) if cols else np.empty((u.size, 0))


def load_conditional_quantile_csv(path):
    """Load an empirical conditional quantile table.

    Expected columns: bin_lower, bin_upper, v, quantile (header required);
    bin centers are the midpoints of the given bin bounds.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"bin_lower", "bin_upper", "v", "quantile"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise InvalidInput("conditional quantile CSV needs bin_lower, bin_upper, v, quantile")
        rows = [(float(r["bin_lower"]), float(r["bin_upper"]), float(r["v"]), float(r["quantile"]))
                for r in reader]
    if not rows:
        raise InvalidInput("conditional quantile CSV has no data rows")
    bins = sorted({(lo, hi) for lo, hi, _, _ in rows})
    v_grid = sorted({v for _, _, v, _ in rows})
    lookup = {(lo, hi, v): q for lo, hi, v, q in rows}
    table = np.empty((len(bins), len(v_grid)))
    for i, (lo, hi) in enumerate(bins):
        for k, v in enumerate(v_grid):
            try:
                table[i, k] = lookup[(lo, hi, v)]
            except KeyError:
                raise InvalidInput(f"missing quantile for bin ({lo}, {hi}) at v={v}")
    centers = np.array([0.5 * (lo + hi) for lo, hi in bins])
    return EmpiricalConditionalQuantile(centers, np.array(v_grid), table, bin_edges=bins)
