"""End-to-end pipelines: simulation study, synthetic portfolio, audit.

Everything is driven by a single versioned :class:`RunConfig`; every output
file embeds the config hash in its name and is written with fixed float
formatting so identical config+seed runs are byte identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from ._validation import as_1d_floats
from .conditional import GaussianBackend, LogisticClassProb, fit_conditional_tail
from .distortion import WeightFunction
from .errors import InvalidInput, MergedBinsWarning, SignApproximationWarning
from .fairness import DENOMINATOR_FLOOR, fair_rule_from_scenario
from .perturbation import ProtectedSpec
from .predictors import GLMRegressor, PortfolioEncoder, model_to_json
from .sensitivity import GaussianLinearScenario, midrank_cdf, v_weights
from .predictors import LinearPredictor

__all__ = [
    "RunConfig",
    "AuditReport",
    "simulate",
    "generate_synthetic_portfolio",
    "audit",
    "gini",
    "quantile_bins",
    "PORTFOLIO_COLUMNS",
]

PORTFOLIO_COLUMNS = (
    "Gender", "Type", "Category", "Occupation", "Age", "Group1", "Poldur",
    "Value", "Adind", "Group2", "Density", "Exppdays", "Numtppd", "Indtppd",
)


def _fmt(x):
    return format(float(x), ".12g")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class RunConfig:
    """One versioned bundle of every tunable the pipelines read.

    Defaults reproduce the bivariate-normal simulation profile; audit
    fields control the two-step portfolio pipeline.
    """

    version: int = 1
    seed: int = 20240
    # simulation profile
    mu_x: float = 0.0
    mu_d: float = 3.0
    sigma_x: float = 1.0
    sigma_d: float = 2.0
    tau: float = 0.5
    sigma_eps: float = 0.5
    beta0: float = 1.0
    beta_x: float = 2.0
    beta_d: float = 1.0
    grid_lo: float = -3.0
    grid_hi: float = 3.0
    grid_step: float = 0.1
    es_level: float = 0.95
    mc_draws: int = 100_000
    fd_delta: float = 1e-3
    # audit profile
    n_rows: int = 100_000
    train_fraction: float = 0.7
    audit_es_level: float = 0.9
    tweedie_power: float = 1.5
    min_exceedances: int = 50
    quantile_iters: int = 2000
    n_bins: int = 10
    protected_level_order: tuple = (0.0, 1.0)

    def config_hash(self):
        doc = asdict(self)
        doc["protected_level_order"] = list(self.protected_level_order)
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:10]

    def to_json(self, path):
        doc = asdict(self)
        doc["protected_level_order"] = list(self.protected_level_order)
        _write_json(path, doc)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("version") != 1:
            raise InvalidInput(f"unsupported config version {doc.get('version')!r}")
        doc["protected_level_order"] = tuple(doc.get("protected_level_order", (0.0, 1.0)))
        known = {f.name for f in cls.__dataclass_fields__.values()}
        unknown = set(doc) - known
        if unknown:
            raise InvalidInput(f"unknown config fields: {sorted(unknown)}")
        return cls(**doc)

    def grid(self):
        n = int(round((self.grid_hi - self.grid_lo) / self.grid_step)) + 1
        return self.grid_lo + self.grid_step * np.arange(n)

    def scenario(self):
        model = LinearPredictor(
            intercept=self.beta0, coef=[self.beta_d, self.beta_x], n_protected=1
        )
        backend = GaussianBackend(
            mu_x=self.mu_x, mu_d=self.mu_d, sigma_x=self.sigma_x,
            sigma_d=self.sigma_d, tau=self.tau,
        )
        return GaussianLinearScenario(model, backend, noise_sd=self.sigma_eps)


# ---------------------------------------------------------------------------
# simulation study


def _batch_stat(values_list, fn, n_batches=20):
    """Full-sample statistic plus replicate standard error.

    ``fn`` maps per-draw arrays to a scalar; replicates evaluate it on 20
    interleaved batches.
    """
    n = values_list[0].size
    idx = np.arange(n) % n_batches
    full = fn(*values_list)
    reps = np.array([fn(*[v[idx == b] for v in values_list]) for b in range(n_batches)])
    return float(full), float(np.std(reps, ddof=1) / np.sqrt(n_batches))


def simulate(config: RunConfig, out_dir):
    """Emit the simulation-study series with analytic and MC columns.

    Four CSV files: the four decision strategies, the coefficient
    adjustment factors, the dependence-held-fixed vs cascade fair rules,
    and the matching sensitivities, each on the configured x grid.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = config.config_hash()
    scenario = config.scenario()
    backend = scenario.backend
    model = scenario.model
    ev = WeightFunction.expected_value()
    es = WeightFunction.expected_shortfall(config.es_level)
    grid = config.grid()

    decision_rows, adjust_rows, fair_rows, sens_rows = [], [], [], []
    for j, x in enumerate(grid):
        seed = config.seed + j
        rng = np.random.default_rng(seed)
        draws = scenario.sample(rng, config.mc_draws, x)
        d = draws["d"][:, 0]
        y = scenario.outcome(draws, x)
        u = midrank_cdf(y)
        g_ev = np.ones_like(u)
        g_es = np.asarray(es(u), dtype=float)
        z_marginal = scenario.scores(draws, x, (0,), "marginal")[:, 0]
        z_cascade = scenario.scores(draws, x, (0,), "cascade")[:, 0]

        # analytic ingredients
        a_ev = scenario.analytic_estimate(ev, x, [0], "marginal")
        a_es = scenario.analytic_estimate(es, x, [0], "marginal")
        a_ev_c = scenario.analytic_estimate(ev, x, [0], "cascade")
        p_u = scenario.unaware_value(x)
        p_df = scenario.discrimination_free_value(x)

        def fair_stat(yv, gv, zv):
            sens = np.mean(zv * gv)
            denom = np.mean(zv**2)
            cross = np.mean(yv * zv)
            return np.mean(yv * gv) - sens / denom * cross

        p_u_mc, p_u_se = _batch_stat([y], lambda yv: float(np.mean(yv)))
        d_unc = backend.sample_d_unconditional(np.random.default_rng(seed + 10_000),
                                               config.mc_draws)[:, 0]
        p_df_mc, p_df_se = _batch_stat(
            [d_unc],
            lambda dv: config.beta0 + config.beta_x * x + config.beta_d * float(np.mean(dv)),
        )
        mf_ev_mc, mf_ev_se = _batch_stat([y, g_ev, z_marginal], fair_stat)
        mf_es_mc, mf_es_se = _batch_stat([y, g_es, z_marginal], fair_stat)
        fair_ev = fair_rule_from_scenario(scenario, x, ev).value
        fair_es = fair_rule_from_scenario(scenario, x, es).value
        decision_rows.append([
            _fmt(x), _fmt(p_u), _fmt(p_u_mc), _fmt(p_u_se),
            _fmt(p_df), _fmt(p_df_mc), _fmt(p_df_se),
            _fmt(fair_ev), _fmt(mf_ev_mc), _fmt(mf_ev_se),
            _fmt(fair_es), _fmt(mf_es_mc), _fmt(mf_es_se),
        ])

        # adjustment factors 1 - c_x (EV) and 1 - cbar_x (ES)
        m = float(backend.conditional_mean(x)[0])
        q = float(backend.conditional_cov()[0, 0]) + m**2
        c_x = m**2 / q
        cbar_x = float(a_es["sens"][0]) * m / (config.beta_d * q)
        c_mc, c_se = _batch_stat([d], lambda dv: 1.0 - np.mean(dv) ** 2 / np.mean(dv**2))
        cbar_mc, cbar_se = _batch_stat(
            [d, g_es, z_marginal],
            lambda dv, gv, zv: 1.0 - np.mean(zv * gv) * np.mean(dv)
            / (config.beta_d * np.mean(dv**2)),
        )
        adjust_rows.append([
            _fmt(x), _fmt(1.0 - c_x), _fmt(c_mc), _fmt(c_se),
            _fmt(1.0 - cbar_x), _fmt(cbar_mc), _fmt(cbar_se),
        ])

        fair_casc = fair_rule_from_scenario(scenario, x, ev, variant="cascade").value
        mf_casc_mc, mf_casc_se = _batch_stat([y, g_ev, z_cascade], fair_stat)
        fair_rows.append([
            _fmt(x), _fmt(fair_ev), _fmt(mf_ev_mc), _fmt(mf_ev_se),
            _fmt(fair_casc), _fmt(mf_casc_mc), _fmt(mf_casc_se),
        ])

        s_marg = float(a_ev["sens"][0])
        s_casc = float(a_ev_c["sens"][0])
        sm_mc, sm_se = _batch_stat([z_marginal, g_ev], lambda zv, gv: float(np.mean(zv * gv)))
        scz_mc, scz_se = _batch_stat([z_cascade, g_ev], lambda zv, gv: float(np.mean(zv * gv)))
        sens_rows.append([
            _fmt(x), _fmt(s_marg), _fmt(sm_mc), _fmt(sm_se),
            _fmt(s_casc), _fmt(scz_mc), _fmt(scz_se),
        ])

    paths = {
        "decisions": out / f"decisions_{tag}.csv",
        "adjustment": out / f"adjustment_{tag}.csv",
        "fair_rules": out / f"fair_rules_{tag}.csv",
        "sensitivities": out / f"sensitivities_{tag}.csv",
        "config": out / f"config_{tag}.json",
    }
    _write_csv(paths["decisions"], [
        "x", "p_unaware", "p_unaware_mc", "p_unaware_se",
        "p_discrimination_free", "p_discrimination_free_mc", "p_discrimination_free_se",
        "p_fair_ev", "p_fair_ev_mc", "p_fair_ev_se",
        "p_fair_es", "p_fair_es_mc", "p_fair_es_se",
    ], decision_rows)
    _write_csv(paths["adjustment"], [
        "x", "one_minus_c", "one_minus_c_mc", "one_minus_c_se",
        "one_minus_cbar", "one_minus_cbar_mc", "one_minus_cbar_se",
    ], adjust_rows)
    _write_csv(paths["fair_rules"], [
        "x", "fair_ev_marginal", "fair_ev_marginal_mc", "fair_ev_marginal_se",
        "fair_ev_cascade", "fair_ev_cascade_mc", "fair_ev_cascade_se",
    ], fair_rows)
    _write_csv(paths["sensitivities"], [
        "x", "sens_marginal", "sens_marginal_mc", "sens_marginal_se",
        "sens_cascade", "sens_cascade_mc", "sens_cascade_se",
    ], sens_rows)
    config.to_json(paths["config"])
    return paths


# ---------------------------------------------------------------------------
# synthetic portfolio


TRUE_FREQUENCY_INTERCEPT = np.log(0.9)
TRUE_SEVERITY_MEAN = 250.0
TRUE_SEVERITY_SHAPE = 5.0
TRUE_COEFFICIENTS = {
    "Gender=Female": -0.35,
    "Age=[28,38)": -0.45,
    "Age=[38,48)": -0.55,
    "Age=[48,58)": -0.65,
    "Age=[58,68)": -0.55,
    "Age=[68,200)": -0.60,
    "Category=Medium": -0.40,
    "Category=Small": -0.55,
    "Occupation=Retired": -0.50,
    "logValue": 0.40,
    "Adind": 0.40,
    "logDensity": 0.25,
}


def _draw_portfolio_frame(rng, n):
    gender = np.where(rng.random(n) < 0.45, "Female", "Male")
    age = np.where(
        gender == "Female",
        18 + np.floor(58 * rng.beta(1.25, 1.45, n)),
        18 + np.floor(58 * rng.beta(1.15, 1.50, n)),
    ).astype(int)
    frame = {
        "Gender": gender,
        "Type": rng.choice(list("ABCDEF"), n, p=[0.2, 0.2, 0.15, 0.15, 0.15, 0.15]),
        "Category": rng.choice(["Large", "Medium", "Small"], n, p=[0.3, 0.45, 0.25]),
        "Occupation": rng.choice(
            ["Employed", "Housewife", "Retired", "SelfEmployed", "Unemployed"],
            n, p=[0.55, 0.1, 0.2, 0.1, 0.05],
        ),
        "Age": age,
        "Group1": rng.integers(1, 21, n).astype(str),
        "Poldur": np.minimum(rng.geometric(0.25, n) - 1, 15),
        "Value": np.round(np.clip(np.exp(rng.normal(9.2, 0.5, n)), 1000.0, 80_000.0), 2),
        "Adind": rng.integers(0, 2, n),
        "Group2": rng.choice([f"R{i}" for i in range(1, 11)], n),
        "Density": np.round(np.clip(np.exp(rng.normal(4.0, 1.0, n)), 10.0, 30_000.0), 2),
        "Exppdays": rng.integers(180, 366, n),
    }
    return frame


def generate_synthetic_portfolio(seed, n, out_dir=None, gender_coefficient=None):
    """Draw a portfolio with a known compound-Poisson-gamma loss process.

    Claim counts are Poisson in exposure with a log-linear frequency in the
    encoded features; severities are gamma. The pure-premium coefficients
    (frequency scaled by mean severity) are returned, and written alongside
    the CSV when ``out_dir`` is given, so fitted models can be checked
    against the generating truth.
    """
    if n < 1:
        raise InvalidInput("n must be at least 1")
    rng = np.random.default_rng(seed)
    frame = _draw_portfolio_frame(rng, n)
    encoder = PortfolioEncoder().fit(frame)
    matrix = encoder.transform(frame)
    names = encoder.feature_names()
    coef = np.zeros(len(names))
    truth = dict(TRUE_COEFFICIENTS)
    if gender_coefficient is not None:
        truth["Gender=Female"] = float(gender_coefficient)
    for key, value in truth.items():
        coef[names.index(key)] = value
    exposure = frame["Exppdays"] / 365.0
    lam = np.exp(TRUE_FREQUENCY_INTERCEPT + matrix @ coef) * exposure
    counts = rng.poisson(lam)
    scale = TRUE_SEVERITY_MEAN / TRUE_SEVERITY_SHAPE
    total = np.zeros(n)
    positive = counts > 0
    total[positive] = np.array([
        rng.gamma(TRUE_SEVERITY_SHAPE * c, scale) for c in counts[positive]
    ])
    frame["Numtppd"] = counts
    frame["Indtppd"] = np.round(total, 2)

    truth_doc = {
        "feature_names": list(names),
        "pure_premium_intercept": float(TRUE_FREQUENCY_INTERCEPT + np.log(TRUE_SEVERITY_MEAN)),
        "pure_premium_coefficients": {k: float(v) for k, v in truth.items()},
        "frequency_intercept": float(TRUE_FREQUENCY_INTERCEPT),
        "severity_mean": TRUE_SEVERITY_MEAN,
        "severity_shape": TRUE_SEVERITY_SHAPE,
        "seed": int(seed),
        "n_rows": int(n),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"portfolio_{seed}_{n}.csv"
        rows = zip(*[frame[c] for c in PORTFOLIO_COLUMNS])
        formatted = []
        for row in rows:
            formatted.append([
                v if isinstance(v, str) else (_fmt(v) if isinstance(v, float) else str(v))
                for v in row
            ])
        _write_csv(csv_path, list(PORTFOLIO_COLUMNS), formatted)
        _write_json(out / f"portfolio_{seed}_{n}_truth.json", truth_doc)
        return csv_path, truth_doc
    return pd.DataFrame(frame, columns=PORTFOLIO_COLUMNS), truth_doc


def load_portfolio(path):
    frame = pd.read_csv(path)
    missing = set(PORTFOLIO_COLUMNS) - set(frame.columns)
    if missing:
        raise InvalidInput(f"portfolio CSV is missing columns: {sorted(missing)}")
    return frame


# ---------------------------------------------------------------------------
# rating diagnostics


def gini(predicted, observed, exposure):
    """Rating-lift index: twice the area between the Lorenz curve and the
    diagonal, with exposure share on one axis and loss share on the other.

    Rows are sorted by prediction ascending (ties merged into one Lorenz
    segment, so constant predictions give exactly zero); positive values
    mean losses concentrate among the highest predictions.
    """
    pred = as_1d_floats(predicted, "predicted")
    obs = as_1d_floats(observed, "observed")
    expo = as_1d_floats(exposure, "exposure")
    if not pred.size == obs.size == expo.size:
        raise InvalidInput("predicted, observed and exposure must have equal length")
    if np.any(expo <= 0):
        raise InvalidInput("exposure must be strictly positive")
    total_loss = obs.sum()
    if total_loss <= 0:
        raise InvalidInput("total observed loss is zero; the index is undefined")
    order = np.argsort(pred, kind="stable")
    pred, obs, expo = pred[order], obs[order], expo[order]
    # merge tied predictions: a tie block is one straight Lorenz segment,
    # so constant predictions give the diagonal and an index of exactly 0
    boundaries = np.nonzero(np.diff(pred))[0] + 1
    loss_blocks = np.add.reduceat(obs, np.concatenate([[0], boundaries]))
    expo_blocks = np.add.reduceat(expo, np.concatenate([[0], boundaries]))
    x = np.concatenate([[0.0], np.cumsum(expo_blocks) / expo.sum()])
    y = np.concatenate([[0.0], np.cumsum(loss_blocks) / total_loss])
    x[-1] = 1.0
    y[-1] = 1.0
    area_under = float(np.trapezoid(y, x))
    index = 2.0 * (0.5 - area_under)
    if x.size == 2:
        index = 0.0
    return index, np.column_stack([x, y])


def quantile_bins(predicted, observed, exposure, n_bins=10):
    """Equal-exposure bins by prediction with per-bin weighted means.

    Returns a list of dicts (bin, exposure share, mean predicted, mean
    observed); the predicted column is nondecreasing by construction.
    """
    if n_bins < 2:
        raise InvalidInput("n_bins must be at least 2")
    pred = as_1d_floats(predicted, "predicted")
    obs = as_1d_floats(observed, "observed")
    expo = as_1d_floats(exposure, "exposure")
    if np.unique(pred).size < n_bins:
        warnings.warn(
            f"only {np.unique(pred).size} distinct predictions for {n_bins} bins; "
            "bins were merged",
            MergedBinsWarning,
        )
    order = np.argsort(pred, kind="stable")
    pred, obs, expo = pred[order], obs[order], expo[order]
    cum = np.cumsum(expo)
    edges = np.linspace(0.0, cum[-1], n_bins + 1)[1:-1]
    idx = np.searchsorted(cum, edges, side="left")
    starts = np.concatenate([[0], idx])
    ends = np.concatenate([idx, [pred.size]])
    table = []
    for b, (s, e) in enumerate(zip(starts, ends)):
        if e <= s:
            continue
        w = expo[s:e]
        table.append({
            "bin": b,
            "exposure_share": float(w.sum() / expo.sum()),
            "mean_predicted": float(np.average(pred[s:e], weights=w)),
            "mean_observed": float(np.average(obs[s:e], weights=w)),
        })
    return table


# ---------------------------------------------------------------------------
# audit


@dataclass(frozen=True)
class AuditReport:
    """Summary of the two-step fairness audit on the test split."""

    decision_summary: dict
    adjustment_summary: dict
    age_group_sensitivity: list
    gini_indices: dict
    quantile_tables: dict
    flags: dict
    config_hash: str

    def __post_init__(self):
        order = ["min", "q25", "q50", "q75", "max"]
        for name, summary in self.decision_summary.items():
            values = [summary[k] for k in order]
            if any(b < a - 1e-9 for a, b in zip(values, values[1:])):
                raise InvalidInput(f"decision summary for {name} is not nondecreasing")

    def to_json(self, path):
        _write_json(path, {
            "decision_summary": self.decision_summary,
            "adjustment_summary": self.adjustment_summary,
            "age_group_sensitivity": self.age_group_sensitivity,
            "gini_indices": self.gini_indices,
            "quantile_tables": self.quantile_tables,
            "flags": self.flags,
            "config_hash": self.config_hash,
        })


def _summary(values):
    v = np.asarray(values, dtype=float)
    return {
        "min": float(v.min()),
        "q25": float(np.quantile(v, 0.25)),
        "q50": float(np.quantile(v, 0.5)),
        "q75": float(np.quantile(v, 0.75)),
        "max": float(v.max()),
    }


def _coefficient_se(model, X, y, w, column, power):
    """Fisher-information standard error for one GLM coefficient.

    Uses the log-link working weights w mu^(2-p) with the dispersion
    estimated by the Pearson statistic; enough precision to test whether
    the protected attribute has any effect at all.
    """
    Xd = np.concatenate([np.ones((X.shape[0], 1)), X], axis=1)
    mu = model.predict(X)
    irls_w = w * mu ** (2.0 - power)
    info = (Xd.T * irls_w) @ Xd
    pearson = float(np.sum(w * (y - mu) ** 2 / mu**power))
    dof = max(X.shape[0] - Xd.shape[1], 1)
    dispersion = pearson / dof
    try:
        cov = dispersion * np.linalg.inv(info)
    except np.linalg.LinAlgError:
        return np.inf
    return float(np.sqrt(max(cov[column + 1, column + 1], 0.0)))


def _signed_abs_fit(features, target, weights, power, max_iter=4000):
    """Tweedie fit on |target| with the dominant sign reattached."""
    sign = float(np.sign(np.average(target, weights=weights)))
    if sign == 0.0:
        sign = 1.0
    if np.any(target * sign < 0):
        warnings.warn(
            "signed conditional target fitted on absolute values with the "
            "dominant sign reattached",
            SignApproximationWarning,
        )
    model = GLMRegressor(loss="tweedie", link="log", power=power,
                         max_iter=max_iter, tol=1e-6)
    model.fit(features, np.abs(target), sample_weight=weights)
    return model, sign


def audit(config: RunConfig, frame, out_dir=None):
    """Two-step audit: fit the loss model on protected plus permissible
    covariates, apply the decision measures on permissible ones only, and
    compare the unaware, discrimination-free and fairness-adjusted rules.

    Returns the :class:`AuditReport`; when ``out_dir`` is given the
    per-policy decisions and the report are also written to disk.
    """
    if isinstance(frame, (str, Path)):
        frame = load_portfolio(frame)
    tag = config.config_hash()
    rng = np.random.default_rng(config.seed)
    n = len(frame)
    perm = rng.permutation(n)
    n_train = int(round(config.train_fraction * n))
    train_idx, test_idx = perm[:n_train], perm[n_train:]

    encoder = PortfolioEncoder().fit(frame)
    matrix = encoder.transform(frame)
    names = encoder.feature_names()
    exposure = np.asarray(frame["Exppdays"], dtype=float) / 365.0
    y_rate = np.asarray(frame["Indtppd"], dtype=float) / exposure
    protected_cols = set(range(len(encoder.protected_levels_) - 1))
    x_cols = [j for j in range(matrix.shape[1]) if j not in protected_cols]
    X_all = matrix[:, x_cols]
    D_all = matrix[:, 0]

    Xtr, Xte = X_all[train_idx], X_all[test_idx]
    Mtr = matrix[train_idx]
    ytr, yte = y_rate[train_idx], y_rate[test_idx]
    wtr, wte = exposure[train_idx], exposure[test_idx]

    # step 1: loss model on protected + permissible covariates
    model_g = GLMRegressor(loss="tweedie", link="log", power=config.tweedie_power,
                           max_iter=4000, tol=1e-6)
    model_g.fit(Mtr, ytr, sample_weight=wtr)
    model_g.onehot_columns = tuple(j for j, nm in enumerate(names) if "=" in nm)

    # step 2 (expected value): unaware decision model on permissible only
    model_u = GLMRegressor(loss="tweedie", link="log", power=config.tweedie_power,
                           max_iter=4000, tol=1e-6)
    model_u.fit(Xtr, ytr, sample_weight=wtr)

    levels = tuple(config.protected_level_order)
    spec = ProtectedSpec.discrete(
        levels=levels,
        probabilities=tuple(
            float(np.mean(D_all[train_idx] == lvl)) for lvl in levels
        ),
    )
    vk = v_weights(spec)

    def level_matrix(base, lvl):
        out = base.copy()
        out[:, 0] = lvl
        return out

    def delta_g_matrix(base):
        # g(level t_k, X) - g(level t_{k+1}, X) for the binary attribute
        return (model_g.predict(level_matrix(base, levels[0]))
                - model_g.predict(level_matrix(base, levels[1])))

    # class probabilities P(D = t_1 | X)
    clf = LogisticClassProb(max_iter=60).fit(Xtr, Mtr[:, 0], sample_weight=wtr)

    def prob_first_level(X):
        probs = clf.predict_proba(X)
        col = list(clf.levels_).index(levels[0])
        return probs[:, col]

    full_test = matrix[test_idx]
    dg_test = delta_g_matrix(full_test)
    p0_test = prob_first_level(Xte)
    # sensitivity numerator: level-shift weights times class probabilities
    sens_ev = vk[0] * dg_test * p0_test

    # denominator and cross term follow the empirical two-step recipe:
    # the one-hot protected value times the chain-rule partial of the
    # fitted log-link model, D * dg/dD = D * beta_D * g(D, X)
    beta_gender = float(model_g.coef_[0])
    # integrability guard: when the fitted protected effect is statistically
    # indistinguishable from zero the correction is a 0/0 ratio whose
    # estimate is pure noise, so the decision is left unadjusted
    beta_se = _coefficient_se(model_g, Mtr, ytr, wtr, 0, config.tweedie_power)
    null_effect = abs(beta_gender) < 2.0 * beta_se
    g_at = {lvl: model_g.predict(level_matrix(full_test, lvl)) for lvl in levels}
    # E[(D dg/dD)^2 | X]: only the nonzero encoded level contributes,
    # weighted by its conditional probability (plug-in, no regression)
    p1_test = 1.0 - p0_test
    denom = p1_test * (levels[1] * beta_gender * g_at[levels[1]]) ** 2

    z_cont_train = Mtr[:, 0] * beta_gender * model_g.predict(Mtr)
    cross_model, cross_sign = _signed_abs_fit(Xtr, ytr * z_cont_train, wtr,
                                              config.tweedie_power)
    cross_test = cross_sign * cross_model.predict(Xte)

    p_u = model_u.predict(Xte)
    degenerate = (denom <= DENOMINATOR_FLOOR) | null_effect
    correction_ev = np.zeros_like(p_u)
    ok = ~degenerate
    correction_ev[ok] = sens_ev[ok] / denom[ok] * cross_test[ok]
    p_mf = p_u - correction_ev

    # discrimination-free: average the unconditional law of D through g
    shares = [float(np.mean(D_all[train_idx] == lvl)) for lvl in levels]
    p_df = np.zeros_like(p_u)
    for lvl, share in zip(levels, shares):
        p_df += share * model_g.predict(level_matrix(full_test, lvl))

    # expected-shortfall path
    alpha = config.audit_es_level
    tail = fit_conditional_tail(
        Xtr, ytr, alpha, sample_weight=wtr, min_exceedances=config.min_exceedances,
        tail_power=config.tweedie_power, quantile_iters=config.quantile_iters,
        on_few="fallback", ridge=1e-8,
    )
    var_train = tail.var_model.predict(Xtr)
    exceed_train = (ytr > var_train).astype(float)
    joint_target = ((Mtr[:, 0] == levels[0]) & (exceed_train > 0)).astype(float)
    joint_clf = LogisticClassProb(max_iter=60).fit(Xtr, joint_target, sample_weight=wtr)
    joint_prob = joint_clf.predict_proba(Xte)[:, list(joint_clf.levels_).index(1.0)]
    sens_es = vk[0] * dg_test * joint_prob / (1.0 - alpha)
    z_gamma_train = z_cont_train * exceed_train / (1.0 - alpha)
    cross_es_model, cross_es_sign = _signed_abs_fit(Xtr, ytr * z_gamma_train, wtr,
                                                    config.tweedie_power)
    cross_es_test = cross_es_sign * cross_es_model.predict(Xte)
    if tail.used_fallback:
        p_u_es = np.full_like(p_u, tail.fallback_mean)
    else:
        p_u_es = tail.tail_model.predict(Xte)
    correction_es = np.zeros_like(p_u)
    correction_es[ok] = sens_es[ok] / denom[ok] * cross_es_test[ok]
    p_mf_es = p_u_es - correction_es

    obs_test = yte * wte  # observed losses
    gini_indices = {}
    quantile_tables = {}
    for name, pred in (("unaware", p_u), ("discrimination_free", p_df),
                       ("fair_ev", p_mf)):
        index, _ = gini(pred, obs_test, wte)
        gini_indices[name] = index
        quantile_tables[name] = quantile_bins(pred, yte, wte, config.n_bins)

    ages = np.asarray(frame["Age"], dtype=float)[test_idx]
    edges = encoder.age_bins
    age_rows = []
    for b in range(len(edges) - 1):
        mask = (ages >= edges[b]) & (ages < edges[b + 1])
        if not np.any(mask):
            continue
        genders = np.asarray(frame["Gender"])[test_idx][mask]
        row = {
            "age_group": f"[{edges[b]},{edges[b + 1]})",
            "n": int(mask.sum()),
            "sensitivity": _summary(sens_ev[mask]),
            "sensitivity_es": _summary(sens_es[mask]),
            "mean_by_gender": {
                str(gv): float(np.mean(sens_ev[mask][genders == gv]))
                for gv in np.unique(genders)
            },
        }
        age_rows.append(row)

    report = AuditReport(
        decision_summary={
            "fair_ev": _summary(p_mf),
            "discrimination_free": _summary(p_df),
            "unaware": _summary(p_u),
            "fair_es": _summary(p_mf_es),
            "unaware_es": _summary(p_u_es),
        },
        adjustment_summary={
            "ev": _summary(p_u - p_mf),
            "es": _summary(p_u_es - p_mf_es),
        },
        age_group_sensitivity=age_rows,
        gini_indices=gini_indices,
        quantile_tables=quantile_tables,
        flags={
            "degenerate_rows": int(np.sum(degenerate)),
            "null_protected_effect": bool(null_effect),
            "protected_coefficient": float(beta_gender),
            "protected_coefficient_se": float(beta_se),
            "tail_fallback": bool(tail.used_fallback),
            "n_exceedances": int(tail.n_exceedances),
            "cross_sign": cross_sign,
            "cross_sign_es": cross_es_sign,
            "n_train": int(n_train),
            "n_test": int(n - n_train),
        },
        config_hash=tag,
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.to_json(out / f"audit_report_{tag}.json")
        raw_cols = ["Gender", "Age", "Category", "Value"]
        rows = []
        for i, idx in enumerate(test_idx):
            rows.append(
                [str(int(idx))]
                + [str(frame[c].iloc[idx] if hasattr(frame[c], "iloc") else frame[c][idx])
                   for c in raw_cols]
                + [_fmt(v) for v in (p_u[i], p_df[i], p_mf[i], p_mf_es[i],
                                      p_u[i] - p_mf[i], denom[i], sens_ev[i])]
                + ["degenerate" if degenerate[i] else ""]
            )
        _write_csv(
            out / f"decisions_{tag}.csv",
            ["id"] + raw_cols
            + ["p_unaware", "p_discrimination_free", "p_fair_ev", "p_fair_es",
               "adjustment", "denominator", "sensitivity", "flags"],
            rows,
        )
        with open(out / f"model_g_{tag}.json", "w") as fh:
            fh.write(model_to_json(model_g, encoding=encoder))
        config.to_json(out / f"config_{tag}.json")
    return report

