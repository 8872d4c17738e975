"""Gaussian rectangle probabilities and doubly truncated moments.

This is the numerical engine behind the censored-regression E-steps:
multivariate normal log-densities, rectangle probabilities (analytic in
dimensions 1-2, conditional quadrature in dimension 3, randomized lattice
integration beyond), Schur-complement conditionals, and first/second
moments of rectangle-truncated Gaussians via the reduction of moments to
lower-dimensional rectangle probabilities, with quasi-Monte Carlo
estimation above the recursion cutoff.

All functions are pure; randomness enters only through explicit seeds in
``QmcConfig``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import erfcx, log_ndtr, ndtr

from . import _qmc
from ._bvn import bvn_rect, bvn_rect_standard
from .errors import DegenerateRegionError, FactorizationError

_LOG_2PI = math.log(2.0 * math.pi)

#: Moments use the exact-in-CDF recursion up to this dimension, QMC above.
P_SWITCH = 4

#: Regions with less mass than this raise DegenerateRegionError.
MASS_FLOOR = 1e-12

#: Ridge factor (times mean diagonal) applied once when Cholesky fails.
RIDGE_SCALE = 1e-10


@dataclass(frozen=True)
class QmcConfig:
    """Randomized-lattice settings for rectangle probabilities and moments."""

    points_per_shift: int = 4096
    shifts: int = 8
    seed: int = 0


@dataclass(frozen=True)
class GaussianParams:
    """Mean vector and positive-definite covariance of a p-dim Gaussian."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        p = mean.shape[0]
        if cov.shape != (p, p):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {p}")
        if not np.all(np.isfinite(mean)) or not np.all(np.isfinite(cov)):
            raise ValueError("mean and covariance must be finite")
        scale = np.abs(cov).max()
        if scale > 0 and np.abs(cov - cov.T).max() > 1e-12 * scale:
            raise ValueError("covariance is not symmetric within 1e-12 relative")

    @property
    def dim(self):
        return self.mean.shape[0]


@dataclass(frozen=True)
class RectRegion:
    """Axis-aligned rectangle with extended-real bounds (+-inf allowed)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape:
            raise ValueError("lower/upper bound lengths differ")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise ValueError("bounds must not be NaN")
        if not np.all(lower < upper):
            bad = int(np.argmin(upper - lower))
            raise ValueError(f"lower[{bad}] must be strictly below upper[{bad}]")

    @property
    def dim(self):
        return self.lower.shape[0]

    def is_whole_space(self):
        return bool(np.all(np.isinf(self.lower)) and np.all(np.isinf(self.upper)))


@dataclass(frozen=True)
class CdfResult:
    probability: float
    error_estimate: float
    points_used: int


@dataclass(frozen=True)
class TruncatedMoments:
    """E[Y], E[YY^T] and the probability mass of Y restricted to a rectangle."""

    m1: np.ndarray
    m2: np.ndarray
    mass: float


def chol_pd(cov):
    """Lower Cholesky factor, with a single documented ridge repair.

    Returns (L, ridge_used). A second failure raises FactorizationError.
    """
    try:
        return np.linalg.cholesky(cov), False
    except np.linalg.LinAlgError:
        pass
    p = cov.shape[0]
    ridge = RIDGE_SCALE * np.trace(cov) / p
    if not ridge > 0:
        raise FactorizationError("covariance has nonpositive trace; cannot repair")
    try:
        return np.linalg.cholesky(cov + ridge * np.eye(p)), True
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("covariance not positive definite after ridge repair") from exc


def mvn_logpdf(params, point):
    """Log density of N(mean, covariance) at ``point`` via triangular solves."""
    point = np.atleast_1d(np.asarray(point, dtype=float))
    p = params.dim
    if point.shape[0] != p:
        raise ValueError(f"point length {point.shape[0]} does not match dimension {p}")
    chol, _ = chol_pd(params.covariance)
    u = solve_triangular(chol, point - params.mean, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (p * _LOG_2PI + logdet + u @ u))


def conditional_params(params, observed_idx, observed_values):
    """Gaussian conditional on a proper nonempty subset of coordinates."""
    obs = np.atleast_1d(np.asarray(observed_idx, dtype=int))
    vals = np.atleast_1d(np.asarray(observed_values, dtype=float))
    p = params.dim
    if obs.size == 0:
        raise ValueError("observed index set must be nonempty")
    if obs.size != np.unique(obs).size:
        raise ValueError("observed indices must be distinct")
    if np.any(obs < 0) or np.any(obs >= p):
        raise ValueError("observed index out of range")
    if vals.shape[0] != obs.size:
        raise ValueError("observed values length does not match index set")
    rest = np.setdiff1d(np.arange(p), obs)
    if rest.size == 0:
        raise ValueError("conditioning on every coordinate leaves nothing to describe")
    cov = params.covariance
    mu = params.mean
    s_oo = cov[np.ix_(obs, obs)]
    s_ro = cov[np.ix_(rest, obs)]
    s_rr = cov[np.ix_(rest, rest)]
    try:
        w = np.linalg.solve(s_oo, s_ro.T).T
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("observed-block covariance is singular") from exc
    mean_c = mu[rest] + w @ (vals - mu[obs])
    cov_c = s_rr - w @ s_ro.T
    cov_c = 0.5 * (cov_c + cov_c.T)
    return GaussianParams(mean_c, cov_c)


# ---------------------------------------------------------------------------
# Stable univariate helpers


def _mills(x):
    """phi(x) / (1 - Phi(x)), tail-stable. Accepts arrays."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    ok = x > -20.0
    out[ok] = math.sqrt(2.0 / math.pi) / erfcx(x[ok] / math.sqrt(2.0))
    return out


def _log1mexp(t):
    """log(1 - exp(t)) for t <= 0."""
    t = np.asarray(t, dtype=float)
    out = np.empty(t.shape)
    small = t > -math.log(2.0)
    with np.errstate(divide="ignore"):
        out[small] = np.log(-np.expm1(t[small]))
        out[~small] = np.log1p(-np.exp(t[~small]))
    return out


def log_interval_prob(alpha, beta):
    """log P(alpha < Z < beta) for standard normal, tail-stable, vectorized."""
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(beta, float))
    out = np.zeros(alpha.shape)
    lo_open = np.isneginf(alpha)
    hi_open = np.isposinf(beta)
    both = lo_open & hi_open
    out[lo_open & ~both] = log_ndtr(beta[lo_open & ~both])
    out[hi_open & ~both] = log_ndtr(-alpha[hi_open & ~both])
    closed = ~(lo_open | hi_open)
    if np.any(closed):
        a = alpha[closed]
        b = beta[closed]
        # Work on the side where ndtr does not saturate.
        flip = a + b > 0
        a2 = np.where(flip, -b, a)
        b2 = np.where(flip, -a, b)
        lb = log_ndtr(b2)
        la = log_ndtr(a2)
        out[closed] = lb + _log1mexp(np.minimum(la - lb, -1e-300))
    return out


def trunc_moments_1d(mu, sd, lo, hi):
    """Moments of N(mu, sd^2) restricted to [lo, hi], vectorized.

    Returns (logmass, m1, ex2) where ex2 = E[X^2 | X in interval].
    Tail-stable for one-sided intervals via scaled-complementary-erf Mills
    ratios; two-sided intervals use the direct formula over a floored mass.
    """
    mu = np.asarray(mu, dtype=float)
    lo, hi = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    alpha = np.where(np.isneginf(lo), -np.inf, (lo - mu) / sd)
    beta = np.where(np.isposinf(hi), np.inf, (hi - mu) / sd)
    logmass = log_interval_prob(alpha, beta)

    lam = np.zeros(mu.shape)
    ez2 = np.ones(mu.shape)
    lo_open = np.isneginf(alpha)
    hi_open = np.isposinf(beta)

    m = ~lo_open & hi_open  # [alpha, inf)
    if np.any(m):
        h = _mills(alpha[m])
        lam[m] = h
        ez2[m] = 1.0 + alpha[m] * h
    m = lo_open & ~hi_open  # (-inf, beta]
    if np.any(m):
        h = _mills(-beta[m])
        lam[m] = -h
        ez2[m] = 1.0 - beta[m] * h
    m = ~lo_open & ~hi_open
    if np.any(m):
        a = alpha[m]
        b = beta[m]
        mass = np.maximum(np.exp(logmass[m]), 1e-300)
        pa = np.exp(-0.5 * a * a) / math.sqrt(2.0 * math.pi)
        pb = np.exp(-0.5 * b * b) / math.sqrt(2.0 * math.pi)
        lam[m] = (pa - pb) / mass
        ez2[m] = 1.0 + (a * pa - b * pb) / mass

    m1 = mu + sd * lam
    ex2 = mu * mu + 2.0 * mu * sd * lam + sd * sd * ez2
    # Clamp against roundoff so the mean stays inside the interval.
    m1 = np.minimum(np.maximum(m1, lo), hi)
    return logmass, m1, ex2


# ---------------------------------------------------------------------------
# Rectangle probabilities for zero-mean batches (dispatch by dimension)


def _normpdf(x, var):
    return np.exp(-0.5 * x * x / var) / math.sqrt(2.0 * math.pi * var)


def _rect_prob_3d_quad(cov, lower, upper, n_nodes=64):
    """3-d rectangle probability by conditioning on the first coordinate.

    Gauss-Legendre over the (clipped) first-coordinate interval with the
    analytic bivariate probability of the conditional rectangle inside.
    Deterministic; absolute error well below 1e-10 for regions that carry
    non-negligible mass.
    """
    from scipy.special import roots_legendre

    lower = np.atleast_2d(lower)
    upper = np.atleast_2d(upper)
    s0 = math.sqrt(cov[0, 0])
    lo = np.maximum(lower[:, 0], -8.5 * s0)
    hi = np.minimum(upper[:, 0], 8.5 * s0)
    width = hi - lo
    ok = width > 0

    out = np.zeros(lower.shape[0])
    if not np.any(ok):
        return out
    lo = lo[ok]
    hi = hi[ok]

    t, w = roots_legendre(n_nodes)
    half = 0.5 * (hi - lo)
    x = 0.5 * (hi + lo)[:, None] + half[:, None] * t[None, :]  # (n, m)
    dens = _normpdf(x, cov[0, 0]) * half[:, None] * w[None, :]

    coef = cov[1:, 0] / cov[0, 0]
    ccov = cov[1:, 1:] - np.outer(cov[1:, 0], cov[0, 1:]) / cov[0, 0]
    ccov = 0.5 * (ccov + ccov.T)
    s1 = math.sqrt(ccov[0, 0])
    s2 = math.sqrt(ccov[1, 1])
    r = min(1.0, max(-1.0, ccov[0, 1] / (s1 * s2)))

    lo1 = (lower[ok, 1, None] - coef[0] * x) / s1
    hi1 = (upper[ok, 1, None] - coef[0] * x) / s1
    lo2 = (lower[ok, 2, None] - coef[1] * x) / s2
    hi2 = (upper[ok, 2, None] - coef[1] * x) / s2
    p2 = bvn_rect_standard(lo1, hi1, lo2, hi2, r)
    out[ok] = np.clip((dens * p2).sum(axis=1), 0.0, 1.0)
    return out


def rect_prob_batch(cov, lower, upper, qmc=None, seed_base=0):
    """P(lower < X < upper) for X ~ N(0, cov), vectorized over rows.

    Dimensions 1-3 are deterministic (Phi / bivariate quadrature /
    conditional quadrature); higher dimensions fall back to per-row QMC.
    """
    lower = np.atleast_2d(np.asarray(lower, dtype=float))
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    k = cov.shape[0]
    if k == 1:
        s = math.sqrt(cov[0, 0])
        return np.clip(ndtr(upper[:, 0] / s) - ndtr(lower[:, 0] / s), 0.0, 1.0)
    if k == 2:
        return bvn_rect(lower, upper, cov)
    if k == 3:
        return _rect_prob_3d_quad(cov, lower, upper)
    qmc = qmc or QmcConfig()
    chol, _ = chol_pd(cov)
    out = np.empty(lower.shape[0])
    for i in range(lower.shape[0]):
        seed = np.random.SeedSequence([int(seed_base), i])
        out[i], _, _ = _qmc.rect_prob_qmc(
            chol, lower[i], upper[i], qmc.points_per_shift, qmc.shifts, seed
        )
    return out


def mvn_cdf(params, region, qmc=None):
    """Probability of an axis-aligned rectangle under N(mean, covariance).

    p = 1 short-circuits to the erf-based Phi (abs error ~1e-15); p = 2 uses
    the analytic bivariate quadrature; p >= 3 uses the randomized lattice
    rule, whose 3-sigma shift spread is reported as the error estimate.
    """
    qmc = qmc or QmcConfig()
    p = params.dim
    if region.dim != p:
        raise ValueError(f"region dimension {region.dim} does not match parameters {p}")
    lower = region.lower - params.mean
    upper = region.upper - params.mean
    if p == 1:
        s = math.sqrt(params.covariance[0, 0])
        prob = float(np.clip(ndtr(upper[0] / s) - ndtr(lower[0] / s), 0.0, 1.0))
        return CdfResult(prob, 1e-15, 0)
    if p == 2:
        prob = float(bvn_rect(lower[None, :], upper[None, :], params.covariance)[0])
        return CdfResult(prob, 5e-14, 0)

    # Scale to unit variances and put the most restrictive coordinates first;
    # both steps reduce the variance of the lattice estimator.
    sd = np.sqrt(np.diag(params.covariance))
    corr = params.covariance / np.outer(sd, sd)
    lo = lower / sd
    hi = upper / sd
    order = np.argsort(ndtr(hi) - ndtr(lo))
    chol, _ = chol_pd(corr[np.ix_(order, order)])
    prob, err, used = _qmc.rect_prob_qmc(
        chol, lo[order], hi[order], qmc.points_per_shift, qmc.shifts,
        np.random.SeedSequence(qmc.seed),
    )
    return CdfResult(prob, err, used)


# ---------------------------------------------------------------------------
# Truncated moments: reduction to lower-dimensional rectangle probabilities


def _pdf2(x, y, cov):
    """Bivariate normal density at paired points; inf coordinates give 0."""
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
    finite = np.isfinite(x) & np.isfinite(y)
    out = np.zeros(x.shape)
    xs = np.where(finite, x, 0.0)
    ys = np.where(finite, y, 0.0)
    quad = (cov[1, 1] * xs * xs - 2.0 * cov[0, 1] * xs * ys + cov[0, 0] * ys * ys) / det
    out[finite] = (np.exp(-0.5 * quad) / (2.0 * math.pi * math.sqrt(det)))[finite]
    return out


def mw_moments_batch(cov, lower, upper, mass):
    """Zero-mean truncated first/second moments by the CDF reduction.

    cov is (k, k) with 2 <= k <= P_SWITCH; lower/upper are (n, k) with
    +-inf allowed; mass holds the rectangle probabilities. Returns
    (m1, m2) of shapes (n, k) and (n, k, k).
    """
    lower = np.atleast_2d(lower)
    upper = np.atleast_2d(upper)
    n, k = lower.shape
    mass = np.asarray(mass, dtype=float)

    # F[j] at each bound: marginal density at the bound times the
    # conditional probability of the remaining rectangle.
    f_lo = np.zeros((n, k))
    f_hi = np.zeros((n, k))
    for j in range(k):
        others = [i for i in range(k) if i != j]
        coef = cov[others, j] / cov[j, j]
        ccov = cov[np.ix_(others, others)] - np.outer(cov[others, j], cov[j, others]) / cov[j, j]
        ccov = 0.5 * (ccov + ccov.T)
        for bound, out in ((lower[:, j], f_lo), (upper[:, j], f_hi)):
            finite = np.isfinite(bound)
            if not np.any(finite):
                continue
            x = bound[finite]
            dens = _normpdf(x, cov[j, j])
            lo_c = lower[np.ix_(finite, others)] - x[:, None] * coef[None, :]
            hi_c = upper[np.ix_(finite, others)] - x[:, None] * coef[None, :]
            out[finite, j] = dens * rect_prob_batch(ccov, lo_c, hi_c)

    m1 = (f_lo - f_hi) @ cov / mass[:, None]

    # Boundary-weighted terms a_k F_k(a_k) - b_k F_k(b_k), with the
    # convention that infinite bounds contribute zero.
    e = np.where(np.isfinite(lower), lower, 0.0) * f_lo - np.where(
        np.isfinite(upper), upper, 0.0
    ) * f_hi

    # Corner terms F_{cq} over unordered coordinate pairs.
    g = np.zeros((n, k, k))
    for c in range(k):
        for q in range(c + 1, k):
            pair = [c, q]
            rest = [i for i in range(k) if i not in pair]
            s2 = cov[np.ix_(pair, pair)]
            if rest:
                w2 = np.linalg.solve(s2, cov[np.ix_(pair, rest)]).T  # (r, 2)
                ccov = cov[np.ix_(rest, rest)] - w2 @ cov[np.ix_(pair, rest)]
                ccov = 0.5 * (ccov + ccov.T)
            total = np.zeros(n)
            for xc, sc in ((lower[:, c], 1.0), (upper[:, c], -1.0)):
                for xq, sq in ((lower[:, q], 1.0), (upper[:, q], -1.0)):
                    dens = _pdf2(xc, xq, s2)
                    live = dens > 0.0
                    if rest and np.any(live):
                        shift = np.stack([xc[live], xq[live]], axis=1) @ w2.T
                        lo_c = lower[np.ix_(live, rest)] - shift
                        hi_c = upper[np.ix_(live, rest)] - shift
                        dens = dens.copy()
                        dens[live] *= rect_prob_batch(ccov, lo_c, hi_c)
                    total += sc * sq * dens
            g[:, c, q] = total
            g[:, q, c] = total

    # Second moment: mass*S + sum_c O_c e_c + sum_{c,q != c} S[:,c] B[c,q,:] G_cq.
    o_coef = np.einsum("ic,jc->cij", cov, cov) / np.diag(cov)[:, None, None]
    t2 = np.einsum("cij,nc->nij", o_coef, e)
    b_coef = cov[None, :, :].repeat(k, axis=0)  # B[c, q, j] = S[j, q] ...
    b_coef = np.transpose(b_coef, (0, 2, 1)).copy()
    for c in range(k):
        b_coef[c] -= np.outer(cov[c, :], cov[:, c]) / cov[c, c]
    t3 = np.einsum("ic,cqj,ncq->nij", cov, b_coef, g)
    m2 = cov[None, :, :] + (t2 + t3) / mass[:, None, None]
    m2 = 0.5 * (m2 + np.transpose(m2, (0, 2, 1)))
    return m1, m2


def truncated_moments(params, region, qmc=None):
    """First and second moments of N(mean, cov) restricted to a rectangle.

    Uses exact univariate formulas for p = 1, the CDF-reduction recursion up
    to ``P_SWITCH``, and self-normalized randomized-lattice estimates above.
    Raises DegenerateRegionError when the rectangle mass falls below
    ``MASS_FLOOR``.
    """
    qmc = qmc or QmcConfig()
    p = params.dim
    if region.dim != p:
        raise ValueError(f"region dimension {region.dim} does not match parameters {p}")
    mean = params.mean
    cov = params.covariance
    if region.is_whole_space():
        return TruncatedMoments(mean.copy(), cov + np.outer(mean, mean), 1.0)

    lower = region.lower - mean
    upper = region.upper - mean

    if p == 1:
        logmass, m1, ex2 = trunc_moments_1d(
            np.zeros(1), math.sqrt(cov[0, 0]), lower, upper
        )
        mass = float(np.exp(logmass[0]))
        if mass < MASS_FLOOR:
            raise DegenerateRegionError(mass)
        m1_full = m1 + mean
        m2_full = np.array([[ex2[0] + 2.0 * mean[0] * m1[0] + mean[0] ** 2]])
        m1_full = np.minimum(np.maximum(m1_full, region.lower), region.upper)
        return TruncatedMoments(m1_full, m2_full, mass)

    if p <= P_SWITCH:
        if p < 4:
            mass = float(rect_prob_batch(cov, lower[None, :], upper[None, :])[0])
            if mass < MASS_FLOOR:
                raise DegenerateRegionError(mass)
        else:
            res = mvn_cdf(GaussianParams(np.zeros(p), cov), RectRegion(lower, upper), qmc)
            mass = res.probability
            if mass < MASS_FLOOR:
                raise DegenerateRegionError(mass)
        m1, m2 = mw_moments_batch(cov, lower[None, :], upper[None, :], np.array([mass]))
        m1 = m1[0]
        m2 = m2[0]
    else:
        chol, _ = chol_pd(cov)
        m1, m2, mass, _ = _qmc.truncated_moments_qmc(
            chol, lower, upper, qmc.points_per_shift, qmc.shifts,
            np.random.SeedSequence(qmc.seed),
        )
        if mass < MASS_FLOOR:
            raise DegenerateRegionError(mass)

    m1_full = m1 + mean
    m2_full = m2 + np.outer(mean, m1) + np.outer(m1, mean) + np.outer(mean, mean)
    m1_full = np.minimum(np.maximum(m1_full, region.lower), region.upper)
    m2_full = 0.5 * (m2_full + m2_full.T)
    return TruncatedMoments(m1_full, m2_full, mass)
