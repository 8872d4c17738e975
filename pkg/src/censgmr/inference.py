"""Wald inference from the empirical complete-data score.

The information matrix is approximated by the outer-product sum of
per-observation scores of the conditional expected complete-data
log-likelihood, evaluated at the fitted parameters (expectations held at
the fit). Its inverse estimates the covariance of the estimator; Wald
z-scores and p-values are reported for every regression coefficient.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import ndtr

from .mixture import e_step


@dataclass(frozen=True)
class ParamIndex:
    """Flat layout of the mixture parameter vector.

    Order: the G-1 free mixing weights, then per component the d*p
    coefficients (column-major by response) followed by the p(p+1)/2
    half-vectorized covariance entries (column-major lower triangle).
    """

    G: int
    d: int
    p: int

    @property
    def n_beta(self):
        return self.d * self.p

    @property
    def n_sigma(self):
        return self.p * (self.p + 1) // 2

    @property
    def nu(self):
        return (self.G - 1) + self.G * (self.n_beta + self.n_sigma)

    def omega_slice(self):
        return slice(0, self.G - 1)

    def beta_slice(self, g):
        start = (self.G - 1) + g * (self.n_beta + self.n_sigma)
        return slice(start, start + self.n_beta)

    def sigma_slice(self, g):
        start = (self.G - 1) + g * (self.n_beta + self.n_sigma) + self.n_beta
        return slice(start, start + self.n_sigma)

    def beta_flat(self, g, row, col):
        """Flat index of coefficient (predictor ``row``, response ``col``)."""
        return self.beta_slice(g).start + col * self.d + row

    def vech_indices(self):
        rows, cols = [], []
        for j in range(self.p):
            for i in range(j, self.p):
                rows.append(i)
                cols.append(j)
        return np.array(rows), np.array(cols)

    def pack(self, params):
        v = np.empty(self.nu)
        v[self.omega_slice()] = params.omega[: self.G - 1]
        rows, cols = self.vech_indices()
        for g, comp in enumerate(params.components):
            v[self.beta_slice(g)] = comp.beta.ravel(order="F")
            v[self.sigma_slice(g)] = comp.sigma[rows, cols]
        return v

    def unpack(self, v):
        from .mixture import MixtureParams
        from .tobit import RegressionParams

        omega = np.empty(self.G)
        omega[: self.G - 1] = v[self.omega_slice()]
        omega[self.G - 1] = 1.0 - omega[: self.G - 1].sum()
        rows, cols = self.vech_indices()
        comps = []
        for g in range(self.G):
            beta = v[self.beta_slice(g)].reshape((self.d, self.p), order="F")
            sigma = np.empty((self.p, self.p))
            sigma[rows, cols] = v[self.sigma_slice(g)]
            sigma[cols, rows] = v[self.sigma_slice(g)]
            comps.append(RegressionParams(beta, sigma))
        return MixtureParams(omega, tuple(comps))


@dataclass(frozen=True)
class WaldEntry:
    component: int
    predictor: int
    response: int
    estimate: float
    se: float          # NaN when the covariance diagonal was nonpositive
    z: float
    p: float

    @property
    def sig_005(self):
        return bool(self.p < 0.05)

    @property
    def sig_001(self):
        return bool(self.p < 0.01)

    @property
    def sig_0001(self):
        return bool(self.p < 0.001)


@dataclass
class WaldReport:
    entries: list
    n_tests: int
    bonferroni_alpha: float
    pseudo_inverse: bool = False

    def entry(self, component, predictor, response):
        for e in self.entries:
            if (e.component, e.predictor, e.response) == (component, predictor, response):
                return e
        raise KeyError((component, predictor, response))

    def sig_bonferroni(self, entry):
        return bool(entry.p < self.bonferroni_alpha)

    def to_rows(self):
        rows = []
        for e in self.entries:
            rows.append({
                "component": e.component,
                "predictor": e.predictor,
                "response": e.response,
                "estimate": e.estimate,
                "se": None if np.isnan(e.se) else e.se,
                "z": None if np.isnan(e.z) else e.z,
                "p": None if np.isnan(e.p) else e.p,
                "sig_005": e.sig_005,
                "sig_001": e.sig_001,
                "sig_0001": e.sig_0001,
                "sig_bonferroni": self.sig_bonferroni(e),
            })
        return rows


def score_matrix(params, dataset, cache=None):
    """Per-observation scores s_c at the fitted parameters, shape (n, nu).

    The covariance block uses the half-vectorized symmetric-matrix chain
    rule: diagonal entries as-is, off-diagonal entries doubled.
    """
    if cache is None:
        _, cache = e_step(params, dataset)
    G = params.n_components
    d, p = params.d, params.p
    index = ParamIndex(G, d, p)
    n = dataset.n
    X = dataset.X
    Z = cache.Z
    S = np.empty((n, index.nu))

    if G > 1:
        S[:, index.omega_slice()] = (
            Z[:, : G - 1] / params.omega[None, : G - 1]
            - (Z[:, G - 1] / params.omega[G - 1])[:, None]
        )

    rows, cols = index.vech_indices()
    mult = np.where(rows == cols, 1.0, 2.0)
    for g, comp in enumerate(params.components):
        prec = np.linalg.inv(comp.sigma)
        m = X @ comp.beta
        r = (cache.y1[g] - m) @ prec
        bscore = Z[:, g, None, None] * X[:, :, None] * r[:, None, :]
        S[:, index.beta_slice(g)] = bscore.transpose(0, 2, 1).reshape(n, d * p)

        a = (
            cache.y2[g]
            - m[:, :, None] * cache.y1[g][:, None, :]
            - cache.y1[g][:, :, None] * m[:, None, :]
            + m[:, :, None] * m[:, None, :]
        )
        inner = np.einsum("ab,nbc,cd->nad", prec, a, prec)
        dmat = 0.5 * Z[:, g, None, None] * (inner - prec[None, :, :])
        S[:, index.sigma_slice(g)] = dmat[:, rows, cols] * mult[None, :]
    return S


def complete_score(params, dataset, i, resp_row, cache):
    """Score vector of one observation (ParamIndex layout)."""
    sub = dataset.row_subset([i])
    row_cache = type(cache)(
        cache.loglik_ig[[i]], cache.y1[:, [i]], cache.y2[:, [i]],
        np.atleast_2d(resp_row), cache.loglik,
    )
    return score_matrix(params, sub, row_cache)[0]


def empirical_information(params, dataset, cache=None):
    """Sum of score outer products; its inverse estimates Cov(estimate)."""
    S = score_matrix(params, dataset, cache)
    info = S.T @ S
    return 0.5 * (info + info.T)


def stationarity_gap(params, dataset, cache=None):
    """(norm of summed score, acceptance threshold) at the fitted params.

    The threshold scales with sqrt(nu * n) times the root-mean-square
    per-observation score entry.
    """
    S = score_matrix(params, dataset, cache)
    n, nu = S.shape
    total = np.linalg.norm(S.sum(axis=0))
    rms = np.sqrt(np.mean(S * S))
    return total, 1e-4 * np.sqrt(nu * n) * rms * n


def wald_tests(params, info, alpha=0.05):
    """Wald z-tests of every regression coefficient.

    Standard errors come from the diagonal of the inverse information;
    Bonferroni correction runs over all G*d*p coefficient tests. A
    numerically singular information matrix falls back to the pseudo-inverse
    (flagged); nonpositive variances yield absent standard errors.
    """
    G = params.n_components
    d, p = params.d, params.p
    index = ParamIndex(G, d, p)
    pseudo = False
    try:
        cov = cho_solve(cho_factor(info), np.eye(info.shape[0]))
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(info)
        pseudo = True
    var = np.diag(cov)

    n_tests = G * d * p
    entries = []
    for g, comp in enumerate(params.components):
        for c in range(p):
            for r in range(d):
                est = float(comp.beta[r, c])
                v = var[index.beta_flat(g, r, c)]
                if v > 0:
                    se = float(np.sqrt(v))
                    z = est / se
                    pval = float(2.0 * ndtr(-abs(z)))
                    pval = max(pval, np.finfo(float).tiny)
                else:
                    se = z = pval = np.nan
                entries.append(WaldEntry(g, r, c, est, se, z, pval))
    return WaldReport(entries, n_tests, alpha / n_tests, pseudo)
