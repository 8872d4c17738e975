"""Single-component multivariate censored (tobit) regression via EM.

The E-step fills censored coordinates with conditional truncated-Gaussian
moments; the M-step is the closed-form weighted least-squares /
residual-moment update. Also the validated building block for the mixture.
"""

from dataclasses import dataclass, field

import numpy as np

from ._estep import component_suffstats, weighted_mstep
from .truncated_gaussian import chol_pd


@dataclass(frozen=True)
class RegressionParams:
    """Coefficient matrix (d x p) and residual covariance (p x p)."""

    beta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        beta = np.atleast_2d(np.asarray(self.beta, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sigma", sigma)
        p = beta.shape[1]
        if sigma.shape != (p, p):
            raise ValueError("sigma shape does not match the number of responses")
        scale = np.abs(sigma).max()
        if scale > 0 and np.abs(sigma - sigma.T).max() > 1e-12 * scale:
            raise ValueError("sigma is not symmetric within 1e-12 relative")

    @property
    def d(self):
        return self.beta.shape[0]

    @property
    def p(self):
        return self.beta.shape[1]


@dataclass
class EmTrace:
    loglik_per_iter: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    final_rel_change: float = np.nan


@dataclass(frozen=True)
class EmConfig:
    tol: float = 1e-6
    max_iter: int = 500
    seed: int = 0


def initial_params(dataset):
    """OLS start treating censored values as observed at their limits."""
    y1 = dataset.Y
    y2 = dataset.Y[:, :, None] * dataset.Y[:, None, :]
    beta, sigma = weighted_mstep(dataset.X, y1, y2)
    sigma = _ensure_pd(sigma)
    return RegressionParams(beta, sigma)


def _ensure_pd(sigma):
    try:
        chol_pd(sigma)
        return sigma
    except Exception:
        p = sigma.shape[0]
        bump = max(np.trace(sigma) / p, 1.0) * 1e-6
        return sigma + bump * np.eye(p)


def tobit_estep(params, dataset, i):
    """(<y*_i>, <y*_i y*_i^T>) for observation ``i``.

    Uncensored rows pass through exactly; censored coordinates come from
    the conditional truncated moments given the observed block.
    """
    sub = dataset.row_subset([i])
    stats = component_suffstats(params.beta, params.sigma, sub)
    return stats.y1[0], stats.y2[0]


def tobit_loglik(params, dataset):
    """Incomplete-data log-likelihood: observed density times rectangle mass."""
    stats = component_suffstats(params.beta, params.sigma, dataset, need_moments=False)
    return float(stats.loglik.sum())


def fit_tobit(dataset, config=None):
    """EM fit of the multivariate tobit regression.

    Returns (RegressionParams, EmTrace). Non-convergence within
    ``config.max_iter`` is reported through the trace flag, not raised.
    """
    config = config or EmConfig()
    if dataset.n <= dataset.d:
        raise ValueError("need more observations than design columns")
    if not config.tol > 0:
        raise ValueError("tol must be positive")

    params = initial_params(dataset)
    trace = EmTrace()
    prev = None
    for it in range(config.max_iter):
        stats = component_suffstats(
            params.beta, params.sigma, dataset, seed_base=config.seed
        )
        ll = float(stats.loglik.sum())
        trace.loglik_per_iter.append(ll)
        trace.iterations = it + 1
        if prev is not None:
            rel = abs(ll - prev) / (abs(prev) + 1e-300)
            trace.final_rel_change = rel
            if rel < config.tol:
                trace.converged = True
                break
        prev = ll
        if it == config.max_iter - 1:
            break  # keep returned params consistent with the last E-step
        beta, sigma = weighted_mstep(dataset.X, stats.y1, stats.y2)
        params = RegressionParams(beta, _ensure_pd(sigma))
    return params, trace
