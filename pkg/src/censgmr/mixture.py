"""Censored multivariate Gaussian mixture of regressions.

EM with responsibilities computed in log space, per-component truncated
conditional moments, closed-form weighted M-step, and a multi-start driver
that keeps the best converged restart. Component order in reported fits is
canonical: descending intercept of the first response, ties by weight.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from ._estep import component_suffstats, weighted_mstep
from .errors import ComponentCollapseError, FitFailureError
from .tobit import EmTrace, RegressionParams, _ensure_pd
from .truncated_gaussian import chol_pd

log = logging.getLogger(__name__)

OMEGA_FLOOR = 1e-6


@dataclass(frozen=True)
class MixtureParams:
    """Mixing proportions and per-component regression parameters."""

    omega: np.ndarray
    components: tuple

    def __post_init__(self):
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        comps = tuple(self.components)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "components", comps)
        if omega.shape[0] != len(comps):
            raise ValueError("omega length does not match component count")
        if np.any(omega <= 0.0) or np.any(omega >= 1.0):
            if not (len(comps) == 1 and np.allclose(omega, 1.0)):
                raise ValueError("mixing proportions must lie in (0, 1)")
        if abs(omega.sum() - 1.0) > 1e-12:
            raise ValueError("mixing proportions must sum to 1")

    @property
    def n_components(self):
        return len(self.components)

    @property
    def d(self):
        return self.components[0].d

    @property
    def p(self):
        return self.components[0].p

    def n_free_params(self):
        G, d, p = self.n_components, self.d, self.p
        return (G - 1) + G * (d * p + p * (p + 1) // 2)


@dataclass(frozen=True)
class Responsibilities:
    Z: np.ndarray

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=float)
        object.__setattr__(self, "Z", Z)
        if np.any(Z < -1e-12) or np.any(Z > 1 + 1e-12):
            raise ValueError("responsibilities must lie in [0, 1]")
        if np.abs(Z.sum(axis=1) - 1.0).max() > 1e-10:
            raise ValueError("responsibility rows must sum to 1")


@dataclass
class EStepCache:
    """Per-(row, component) log-likelihoods and conditional moments."""

    loglik_ig: np.ndarray  # (n, G)
    y1: np.ndarray         # (G, n, p)
    y2: np.ndarray         # (G, n, p, p)
    Z: np.ndarray          # (n, G)
    loglik: float
    degenerate_rows: int = 0
    ridge_repairs: int = 0

    def reordered(self, order):
        return EStepCache(
            self.loglik_ig[:, order], self.y1[list(order)], self.y2[list(order)],
            self.Z[:, order], self.loglik, self.degenerate_rows, self.ridge_repairs,
        )


@dataclass
class RestartSummary:
    restart: int
    seed: int
    converged: bool
    loglik: float
    iterations: int = 0
    error: str = ""


@dataclass
class FitResult:
    params: MixtureParams
    resp: Responsibilities
    trace: EmTrace
    loglik: float
    n_params: int
    restart_summaries: list
    diagnostics: dict
    cache: EStepCache = None

    @property
    def n_components(self):
        return self.params.n_components


@dataclass(frozen=True)
class FitConfig:
    n_components: int = 1
    tol: float = 1e-6
    max_iter: int = 500
    n_restarts: int = 32
    seed: int = 0
    init: str = "random-partition"  # or "kmeans"


def component_loglik(comp, dataset, i):
    """log[f(y_obs) * P(rectangle | y_obs)] of row ``i`` under one component."""
    sub = dataset.row_subset([i])
    stats = component_suffstats(comp.beta, comp.sigma, sub, need_moments=False)
    return float(stats.loglik[0])


def e_step(params, dataset, seed_base=0):
    """Responsibilities and per-component conditional moments."""
    n, p = dataset.Y.shape
    G = params.n_components
    loglik_ig = np.empty((n, G))
    y1 = np.empty((G, n, p))
    y2 = np.empty((G, n, p, p))
    degenerate = 0
    ridge = 0
    for g, comp in enumerate(params.components):
        stats = component_suffstats(comp.beta, comp.sigma, dataset, seed_base=seed_base)
        loglik_ig[:, g] = stats.loglik
        y1[g] = stats.y1
        y2[g] = stats.y2
        degenerate += stats.degenerate_rows
        ridge += int(stats.ridge_repaired)

    with np.errstate(divide="ignore"):
        weighted = loglik_ig + np.log(params.omega)[None, :]
    norm = logsumexp(weighted, axis=1)
    if np.any(np.isneginf(norm)):
        bad = int(np.nonzero(np.isneginf(norm))[0][0])
        raise FitFailureError(
            f"observation {bad} has zero likelihood under every component"
        )
    Z = np.exp(weighted - norm[:, None])
    Z /= Z.sum(axis=1, keepdims=True)
    cache = EStepCache(loglik_ig, y1, y2, Z, float(norm.sum()), degenerate, ridge)
    return Responsibilities(Z), cache


def m_step(resp, cache, dataset):
    """Closed-form parameter update from responsibilities and moments.

    Raises ComponentCollapseError when a component's effective size drops
    below d + 1 (or its weight below the floor); collapsed restarts are
    discarded by the driver rather than repaired.
    """
    Z = resp.Z
    n, G = Z.shape
    d = dataset.d
    omega = Z.sum(axis=0) / n
    comps = []
    for g in range(G):
        eff = float(Z[:, g].sum())
        if eff < d + 1 or omega[g] < OMEGA_FLOOR:
            raise ComponentCollapseError(g, eff)
        beta, sigma = weighted_mstep(dataset.X, cache.y1[g], cache.y2[g], Z[:, g])
        comps.append(RegressionParams(beta, _ensure_pd(sigma)))
    return MixtureParams(omega, tuple(comps))


def mixture_loglik(params, dataset):
    """Incomplete-data log-likelihood of the mixture (log-sum-exp over g)."""
    n = dataset.n
    G = params.n_components
    loglik_ig = np.empty((n, G))
    for g, comp in enumerate(params.components):
        stats = component_suffstats(comp.beta, comp.sigma, dataset, need_moments=False)
        loglik_ig[:, g] = stats.loglik
    with np.errstate(divide="ignore"):
        weighted = loglik_ig + np.log(params.omega)[None, :]
    return float(logsumexp(weighted, axis=1).sum())


def classify(result):
    """MAP labels; ties resolve to the lowest component index."""
    return np.argmax(result.resp.Z, axis=1)


# ---------------------------------------------------------------------------
# Initialization and the multi-start driver


def _hard_mstep(labels, dataset, G):
    """One M-step from a hard partition with limit-imputed responses."""
    y1 = dataset.Y
    y2 = dataset.Y[:, :, None] * dataset.Y[:, None, :]
    n = dataset.n
    comps = []
    omega = np.empty(G)
    for g in range(G):
        w = (labels == g).astype(float)
        omega[g] = max(w.sum() / n, OMEGA_FLOOR)
        beta, sigma = weighted_mstep(dataset.X, y1, y2, w)
        comps.append(RegressionParams(beta, _ensure_pd(sigma)))
    omega /= omega.sum()
    return MixtureParams(omega, tuple(comps))


def _init_params(dataset, G, rng, how):
    n, d = dataset.X.shape
    if how == "kmeans":
        from scipy.cluster.vq import kmeans2

        ystd = (dataset.Y - dataset.Y.mean(axis=0)) / dataset.Y.std(axis=0)
        _, labels = kmeans2(ystd, G, minit="++", seed=rng)
    elif how == "random-partition":
        labels = None
    else:
        raise ValueError(f"unknown init strategy {how!r}")
    for _ in range(100):
        if labels is None:
            labels = rng.integers(0, G, size=n)
        counts = np.bincount(labels, minlength=G)
        if counts.min() >= max(d + 1, 2):
            return _hard_mstep(labels, dataset, G)
        labels = None
    raise FitFailureError("could not build a non-degenerate initial partition")


def _run_em(params, dataset, config, seed_base):
    trace = EmTrace()
    prev = None
    resp = cache = None
    for it in range(config.max_iter):
        resp, cache = e_step(params, dataset, seed_base=seed_base)
        trace.loglik_per_iter.append(cache.loglik)
        trace.iterations = it + 1
        if prev is not None:
            rel = abs(cache.loglik - prev) / (abs(prev) + 1e-300)
            trace.final_rel_change = rel
            if rel < config.tol:
                trace.converged = True
                break
        prev = cache.loglik
        if it == config.max_iter - 1:
            break
        params = m_step(resp, cache, dataset)
    return params, resp, cache, trace


def canonical_order(params):
    """Descending intercept of the first response, ties by weight."""
    keys = [
        (-comp.beta[0, 0], -params.omega[g], g)
        for g, comp in enumerate(params.components)
    ]
    return tuple(g for *_, g in sorted(keys))


def fit_mixture(dataset, config):
    """Multi-start EM fit; returns the best converged restart.

    If no restart converges, the best completed run is returned flagged
    non-converged; if every restart collapses, raises FitFailureError with
    the per-restart diagnostics.
    """
    G = config.n_components
    if G < 1:
        raise ValueError("need at least one component")
    if dataset.n <= G * dataset.d:
        raise ValueError("not enough observations for this many components")

    runs = []
    summaries = []
    for r in range(config.n_restarts):
        ss = np.random.SeedSequence([config.seed, r])
        rng = np.random.default_rng(ss)
        seed_base = int(ss.generate_state(1)[0])
        summary = RestartSummary(r, seed_base, False, -np.inf)
        try:
            params0 = _init_params(dataset, G, rng, config.init)
            params, resp, cache, trace = _run_em(params0, dataset, config, config.seed)
            summary.converged = trace.converged
            summary.loglik = cache.loglik
            summary.iterations = trace.iterations
            runs.append((r, params, resp, cache, trace))
        except (ComponentCollapseError, FitFailureError) as exc:
            summary.error = str(exc)
            log.debug("restart %d failed: %s", r, exc)
        summaries.append(summary)

    if not runs:
        raise FitFailureError(
            f"all {config.n_restarts} restarts collapsed", restart_summaries=summaries
        )

    converged = [run for run in runs if run[4].converged]
    pool = converged if converged else runs
    best = max(pool, key=lambda run: (run[3].loglik, -run[0]))
    _, params, resp, cache, trace = best

    order = canonical_order(params)
    params = MixtureParams(params.omega[list(order)], tuple(params.components[g] for g in order))
    resp = Responsibilities(resp.Z[:, list(order)])
    cache = cache.reordered(order)

    diagnostics = {
        "n_converged_restarts": sum(s.converged for s in summaries),
        "n_collapsed_restarts": sum(bool(s.error) for s in summaries),
        "degenerate_rows": cache.degenerate_rows,
        "ridge_repairs": cache.ridge_repairs,
        "near_empty_components": int((resp.Z.sum(axis=0) < dataset.d + 1).sum()),
        "init": config.init,
        "convergence_criterion": f"relative loglik change < {config.tol}",
    }
    return FitResult(
        params=params,
        resp=resp,
        trace=trace,
        loglik=cache.loglik,
        n_params=params.n_free_params(),
        restart_summaries=summaries,
        diagnostics=diagnostics,
        cache=cache,
    )
