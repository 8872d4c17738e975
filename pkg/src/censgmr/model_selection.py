"""BIC / ICL computation and the cluster-count sweep.

Criteria follow the maximized convention (larger is better):
BIC = loglik - (nu/2) log N and ICL = BIC - entropy(responsibilities),
so ICL <= BIC always. The entropy defaults to the posterior
responsibilities; a hard-assignment variant is available.
"""

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import FitFailureError
from .mixture import fit_mixture


@dataclass
class SelectionRow:
    n_components: int
    loglik: float
    nu: int
    bic: float
    entropy: float
    icl: float
    n_converged: int
    chosen: bool = False


@dataclass
class SelectionTable:
    rows: list
    fits: dict  # n_components -> FitResult (kept for bit-exact recomputation)

    @property
    def chosen(self):
        for row in self.rows:
            if row.chosen:
                return row.n_components
        raise ValueError("no usable cluster count in the sweep")

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["G", "loglik", "nu", "bic", "entropy", "icl", "n_converged", "chosen"])
            for row in self.rows:
                writer.writerow([
                    row.n_components,
                    _fmt(row.loglik), row.nu if row.nu else "",
                    _fmt(row.bic), _fmt(row.entropy), _fmt(row.icl),
                    row.n_converged, int(row.chosen),
                ])


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


def classification_entropy(resp, hard=False):
    """-sum z log z over all rows, with 0 log 0 = 0.

    ``hard=True`` evaluates the entropy at the MAP assignment instead of
    the posterior (i.e., -sum_i log max_g z_ig).
    """
    Z = resp.Z
    if hard:
        return float(-np.sum(np.log(np.maximum(Z.max(axis=1), 1e-300))))
    zsafe = np.where(Z > 0, Z, 1.0)
    return float(-np.sum(Z * np.log(zsafe)))


def icl_bic(fit, n, hard_entropy=False):
    """(bic, entropy, icl) of a fitted mixture on n observations."""
    bic = fit.loglik - 0.5 * fit.n_params * np.log(n)
    entropy = classification_entropy(fit.resp, hard=hard_entropy)
    return float(bic), entropy, float(bic - entropy)


def select_g(dataset, g_range, config, hard_entropy=False):
    """Fit every cluster count in ``g_range`` and mark the ICL argmax.

    Counts with zero converged restarts are tabulated with absent criteria
    and excluded from the argmax; ties break toward the smaller count.
    """
    g_range = sorted(set(int(g) for g in g_range))
    if not g_range:
        raise ValueError("empty sweep range")
    rows = []
    fits = {}
    for g in g_range:
        cfg = replace(config, n_components=g)
        try:
            fit = fit_mixture(dataset, cfg)
        except FitFailureError:
            rows.append(SelectionRow(g, np.nan, 0, np.nan, np.nan, np.nan, 0))
            continue
        n_conv = fit.diagnostics["n_converged_restarts"]
        if n_conv == 0:
            rows.append(SelectionRow(g, np.nan, 0, np.nan, np.nan, np.nan, 0))
            continue
        bic, entropy, icl = icl_bic(fit, dataset.n, hard_entropy=hard_entropy)
        rows.append(SelectionRow(g, fit.loglik, fit.n_params, bic, entropy, icl, n_conv))
        fits[g] = fit

    usable = [row for row in rows if not np.isnan(row.icl)]
    if not usable:
        raise FitFailureError("no cluster count produced a converged fit")
    best = max(usable, key=lambda row: (row.icl, -row.n_components))
    best.chosen = True
    return SelectionTable(rows, fits)
