"""Brute-force validators kept independent of the production code paths.

``fd_sensitivity`` realizes the defining limit of a differential
sensitivity numerically: central finite differences on common random
numbers, with a jackknife standard error over batches. ``deviance_oracle``
re-implements the GLM deviances from scratch and minimizes them by plain
gradient descent with a backtracking line search, run on a far larger
iteration budget than the production fitters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_1d_floats, require_finite
from .distortion import EmpiricalDistribution, evaluate
from .errors import InvalidInput

__all__ = ["FdEstimate", "fd_sensitivity", "example32_quantile", "deviance_oracle"]


@dataclass(frozen=True)
class FdEstimate:
    estimate: float
    standard_error: float
    delta: float
    n_draws: int
    seed: int

    def within(self, target, n_se=2.0, floor=1e-3):
        """True when ``estimate`` is within max(n_se * se, floor) of ``target``."""
        return abs(self.estimate - target) <= max(n_se * self.standard_error, floor)


def _sorted_measure(rho, values):
    return evaluate(rho, EmpiricalDistribution(values=values))


def fd_sensitivity(simulate, rho, delta, n_draws, seed, n_batches=20):
    """Central-difference sensitivity of ``rho`` under a perturbation family.

    ``simulate(rng, n, delta)`` must return outcome draws for perturbation
    size ``delta``; both branches are driven by generators seeded
    identically, so draws are common random numbers and coincide exactly at
    ``delta = 0``. The standard error is a leave-one-batch-out jackknife
    over ``n_batches`` contiguous batches.
    """
    if not 0.0 < delta <= 0.1:
        raise InvalidInput("delta must lie in (0, 0.1]")
    if n_draws < n_batches:
        raise InvalidInput("n_draws must be at least n_batches")
    y_plus = as_1d_floats(simulate(np.random.default_rng(seed), n_draws, +delta), "draws")
    y_minus = as_1d_floats(simulate(np.random.default_rng(seed), n_draws, -delta), "draws")
    require_finite(y_plus, "perturbed draws")
    require_finite(y_minus, "perturbed draws")

    batch = np.arange(n_draws) % n_batches
    order_p = np.argsort(y_plus, kind="stable")
    order_m = np.argsort(y_minus, kind="stable")
    sorted_p, batch_p = y_plus[order_p], batch[order_p]
    sorted_m, batch_m = y_minus[order_m], batch[order_m]

    estimate = (_sorted_measure(rho, sorted_p) - _sorted_measure(rho, sorted_m)) / (2.0 * delta)

    loo = np.empty(n_batches)
    for b in range(n_batches):
        rp = _sorted_measure(rho, sorted_p[batch_p != b])
        rm = _sorted_measure(rho, sorted_m[batch_m != b])
        loo[b] = (rp - rm) / (2.0 * delta)
    se = float(np.sqrt((n_batches - 1) / n_batches * np.sum((loo - loo.mean()) ** 2)))
    return FdEstimate(
        estimate=float(estimate), standard_error=se, delta=delta, n_draws=n_draws, seed=seed
    )


def example32_quantile(u, p, c, x2_value=2.0, d_quantile=None):
    """Closed-form quantile of Y = 1{X1=0} D + 1{X1=1} X2.

    ``X1`` is Bernoulli(p), ``D`` lives on [0, c] (uniform unless a quantile
    function is supplied) and ``X2`` is the constant ``x2_value`` above c.
    The quantile is F_D^{-1}(u / (1-p)) for u <= 1-p and the X2 branch
    above.
    """
    if not 0.0 < p < 1.0:
        raise InvalidInput("p must lie in (0, 1)")
    if x2_value <= c:
        raise InvalidInput("x2_value must exceed the upper support bound c")
    uarr = np.asarray(u, dtype=float)
    if np.any(uarr <= 0.0) or np.any(uarr >= 1.0):
        raise InvalidInput("u must lie strictly inside (0, 1)")
    if d_quantile is None:
        d_quantile = lambda v: c * np.asarray(v, dtype=float)
    out = np.where(uarr <= 1.0 - p, d_quantile(np.minimum(uarr / (1.0 - p), 1.0)), x2_value)
    if np.isscalar(u) or np.asarray(u).ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# long-run deviance minimizer (independent of predictors.py)


def _oracle_unit_deviance(loss, y, mu, power):
    if loss == "gaussian":
        return (y - mu) ** 2
    if loss == "poisson":
        term = np.zeros_like(y)
        pos = y > 0
        term[pos] = y[pos] * np.log(y[pos] / mu[pos])
        return 2.0 * (term - (y - mu))
    if loss == "gamma":
        return 2.0 * ((y - mu) / mu - np.log(y / mu))
    if loss == "tweedie":
        p = power
        ypow = np.zeros_like(y)
        pos = y > 0
        ypow[pos] = y[pos] ** (2.0 - p)
        return 2.0 * (
            ypow / ((1.0 - p) * (2.0 - p))
            - y * mu ** (1.0 - p) / (1.0 - p)
            + mu ** (2.0 - p) / (2.0 - p)
        )
    raise InvalidInput(f"deviance oracle does not cover loss {loss!r}")


def _oracle_mu_and_grad(loss, link, X, beta, y, w, power):
    eta = X @ beta
    mu = np.exp(eta) if link == "log" else eta
    if link == "identity" and loss != "gaussian":
        mu = np.maximum(mu, 1e-10)
    if loss == "gaussian":
        dmu = 2.0 * (mu - y)
    elif loss == "poisson":
        dmu = 2.0 * (1.0 - y / mu)
    elif loss == "gamma":
        dmu = 2.0 * (mu - y) / mu**2
    else:
        dmu = 2.0 * mu ** (-power) * (mu - y)
    chain = mu if link == "log" else 1.0
    grad = X.T @ (w * dmu * chain)
    dev = float(np.sum(w * _oracle_unit_deviance(loss, y, mu, power)))
    return mu, dev, grad


def deviance_oracle(X, y, sample_weight=None, loss="tweedie", link="log", power=1.5,
                    max_iter=50_000, tol=1e-12):
    """Minimize the deviance by line-searched gradient descent, run long.

    Returns a dict with the achieved deviance and iteration count. The
    deviance formulas here are written independently of the production
    fitters so the two routes can certify each other.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Xd = np.concatenate([np.ones((X.shape[0], 1)), X], axis=1)
    y = as_1d_floats(y, "y")
    w = np.ones_like(y) if sample_weight is None else as_1d_floats(sample_weight)

    mean = Xd.mean(axis=0)
    std = Xd.std(axis=0)
    std[std < 1e-12] = 1.0
    mean[0], std[0] = 0.0, 1.0
    Xs = (Xd - mean) / std

    beta = np.zeros(Xd.shape[1])
    ybar = max(float(np.average(y, weights=w)), 1e-8)
    beta[0] = np.log(ybar) if link == "log" else ybar

    _, dev, grad = _oracle_mu_and_grad(loss, link, Xs, beta, y, w, power)
    step = 1.0 / max(float(np.linalg.norm(grad)), 1e-12)
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        gnorm2 = float(grad @ grad)
        if np.sqrt(gnorm2) / y.size < tol:
            break
        trial = step * 2.0
        for _ in range(60):
            cand = beta - trial * grad
            _, dev_new, grad_new = _oracle_mu_and_grad(loss, link, Xs, cand, y, w, power)
            if np.isfinite(dev_new) and dev_new <= dev - 1e-4 * trial * gnorm2:
                break
            trial *= 0.5
        else:
            break
        if dev - dev_new < 1e-14 * (1.0 + abs(dev)):
            beta, dev, grad = cand, dev_new, grad_new
            break
        beta, dev, grad, step = cand, dev_new, grad_new, trial
    return {"deviance": dev, "n_iter": n_iter, "gradient_norm": float(np.max(np.abs(grad)))}
