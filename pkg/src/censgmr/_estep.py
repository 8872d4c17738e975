"""Per-observation censored-Gaussian sufficient statistics, batched.

For one regression component (coefficients ``beta``, covariance ``sigma``)
this computes, for every row of a dataset, the observation log-likelihood
log f(y_obs) + log P(censored block's rectangle | y_obs) together with the
conditional expectations <y*> and <y* y*^T> that the EM M-steps consume.

Rows are processed in groups sharing a censored-coordinate set, so each
group reduces to vectorized closed forms: exact univariate moments, the
analytic bivariate rectangle rule, or conditional quadrature in dimension
three. Larger censored blocks (possible only for p >= 4 data) fall back to
the generic per-row moment engine with seeds derived from the row index.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DegenerateRegionError
from .truncated_gaussian import (
    GaussianParams,
    QmcConfig,
    RectRegion,
    chol_pd,
    mw_moments_batch,
    rect_prob_batch,
    trunc_moments_1d,
    truncated_moments,
)

_LOG_2PI = math.log(2.0 * math.pi)

# Below this rectangle mass the recursion is numerically meaningless; the
# row gets a hard -inf log-mass for this component and placeholder moments.
_BATCH_MASS_FLOOR = 1e-13


@dataclass
class ComponentStats:
    """Row-wise sufficient statistics under one regression component."""

    loglik: np.ndarray        # (n,)
    y1: np.ndarray            # (n, p)
    y2: np.ndarray            # (n, p, p)
    ridge_repaired: bool
    degenerate_rows: int


def _gauss_logpdf_rows(resid, chol):
    u = solve_triangular(chol, resid.T, lower=True).T
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (resid.shape[1] * _LOG_2PI + logdet + np.einsum("ij,ij->i", u, u))


def component_suffstats(beta, sigma, dataset, need_moments=True, seed_base=0):
    """Sufficient statistics of every observation under one component."""
    Y = dataset.Y
    X = dataset.X
    n, p = Y.shape
    M = X @ beta

    chol_full, ridge = chol_pd(sigma)
    loglik = np.empty(n)
    y1 = Y.copy() if need_moments else None
    y2 = np.empty((n, p, p)) if need_moments else None
    degenerate = 0

    for group in dataset.pattern_groups():
        rows = group.rows
        cen = group.censored
        k = int(cen.sum())
        if k == 0:
            resid = Y[rows] - M[rows]
            loglik[rows] = _gauss_logpdf_rows(resid, chol_full)
            if need_moments:
                y2[rows] = Y[rows, :, None] * Y[rows, None, :]
            continue

        obs_ix = np.nonzero(~cen)[0]
        cen_ix = np.nonzero(cen)[0]
        if obs_ix.size:
            s_oo = sigma[np.ix_(obs_ix, obs_ix)]
            s_co = sigma[np.ix_(cen_ix, obs_ix)]
            chol_oo, _ = chol_pd(s_oo)
            yo = Y[np.ix_(rows, obs_ix)]
            resid_o = yo - M[np.ix_(rows, obs_ix)]
            marg = _gauss_logpdf_rows(resid_o, chol_oo)
            w = np.linalg.solve(s_oo, s_co.T).T
            cond_mean = M[np.ix_(rows, cen_ix)] + resid_o @ w.T
            cond_cov = sigma[np.ix_(cen_ix, cen_ix)] - w @ s_co.T
            cond_cov = 0.5 * (cond_cov + cond_cov.T)
        else:
            marg = 0.0
            cond_mean = M[rows]
            cond_cov = sigma

        if k == 1:
            sd = math.sqrt(cond_cov[0, 0])
            logmass, m1, ex2 = trunc_moments_1d(
                cond_mean[:, 0], sd, group.lower[:, 0], group.upper[:, 0]
            )
            m1 = m1[:, None]
            m2 = ex2[:, None, None]
        elif k <= 3:
            a = group.lower - cond_mean
            b = group.upper - cond_mean
            mass = rect_prob_batch(cond_cov, a, b)
            ok = mass > _BATCH_MASS_FLOOR
            degenerate += int((~ok).sum())
            with np.errstate(divide="ignore"):
                logmass = np.where(ok, np.log(np.maximum(mass, 1e-300)), -np.inf)
            if need_moments:
                m1z, m2z = mw_moments_batch(cond_cov, a, b, np.maximum(mass, _BATCH_MASS_FLOOR))
                m1z = np.where(ok[:, None], m1z, 0.0)
                m1z = np.minimum(np.maximum(m1z, a), b)
                m1 = m1z + cond_mean
                m2 = (
                    m2z
                    + cond_mean[:, :, None] * m1z[:, None, :]
                    + m1z[:, :, None] * cond_mean[:, None, :]
                    + cond_mean[:, :, None] * cond_mean[:, None, :]
                )
                bad = ~ok
                if bad.any():
                    m2[bad] = m1[bad][:, :, None] * m1[bad][:, None, :]
        else:
            logmass = np.empty(len(rows))
            m1 = np.empty((len(rows), k))
            m2 = np.empty((len(rows), k, k))
            for j, row in enumerate(rows):
                region = RectRegion(group.lower[j], group.upper[j])
                gp = GaussianParams(cond_mean[j], cond_cov)
                row_seed = np.random.SeedSequence([int(seed_base), int(row)]).generate_state(1)[0]
                try:
                    tm = truncated_moments(gp, region, QmcConfig(seed=int(row_seed)))
                    logmass[j] = math.log(tm.mass)
                    m1[j] = tm.m1
                    m2[j] = tm.m2
                except DegenerateRegionError:
                    degenerate += 1
                    logmass[j] = -np.inf
                    m1[j] = np.clip(cond_mean[j], group.lower[j], group.upper[j])
                    m2[j] = np.outer(m1[j], m1[j])

        loglik[rows] = marg + logmass
        if need_moments:
            y1[np.ix_(rows, cen_ix)] = m1
            if obs_ix.size:
                yo = Y[np.ix_(rows, obs_ix)]
                y2[np.ix_(rows, obs_ix, obs_ix)] = yo[:, :, None] * yo[:, None, :]
                cross = yo[:, :, None] * m1[:, None, :]
                y2[np.ix_(rows, obs_ix, cen_ix)] = cross
                y2[np.ix_(rows, cen_ix, obs_ix)] = np.transpose(cross, (0, 2, 1))
            y2[np.ix_(rows, cen_ix, cen_ix)] = m2

    return ComponentStats(loglik, y1, y2, ridge, degenerate)


def weighted_mstep(X, y1, y2, weights=None):
    """Closed-form regression update from conditional sufficient statistics.

    Solves the weighted normal equations for the coefficient matrix and
    returns the weighted residual second-moment covariance (symmetrized).
    """
    n, d = X.shape
    if weights is None:
        xw = X
        wsum = float(n)
        t2 = y2.sum(axis=0)
    else:
        xw = X * weights[:, None]
        wsum = float(weights.sum())
        t2 = np.einsum("n,nij->ij", weights, y2)
    gram = X.T @ xw
    xty = xw.T @ y1
    beta = np.linalg.lstsq(gram, xty, rcond=None)[0]
    cross = beta.T @ xty
    quad = beta.T @ gram @ beta
    sigma = (t2 - cross - cross.T + quad) / wsum
    return beta, 0.5 * (sigma + sigma.T)
