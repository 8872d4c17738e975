"""Censored response datasets and censoring-pattern bookkeeping."""

import warnings
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PatternGroup:
    """Rows sharing one set of censored coordinates.

    ``lower``/``upper`` are the absolute truncation bounds of the censored
    block, one row per observation (directions may differ across rows).
    """

    censored: np.ndarray  # bool, shape (p,)
    rows: np.ndarray      # int, shape (m,)
    lower: np.ndarray     # shape (m, k)
    upper: np.ndarray     # shape (m, k)


@dataclass(eq=False)
class CensoredDataset:
    """Responses with censoring indicators, design matrix, detection limits.

    Y holds censored entries at their limit value; C holds the censoring
    direction per entry (-1 left, 0 none, +1 right); X includes the
    intercept column when one is wanted. ``lower_limits``/``upper_limits``
    are per-response detection limits with +-inf for open sides.

    Treated as immutable after construction.
    """

    Y: np.ndarray
    C: np.ndarray
    X: np.ndarray
    lower_limits: np.ndarray
    upper_limits: np.ndarray
    response_names: tuple = ()
    predictor_names: tuple = ()

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        self.C = np.asarray(self.C, dtype=np.int8)
        self.X = np.asarray(self.X, dtype=float)
        self.lower_limits = np.asarray(self.lower_limits, dtype=float)
        self.upper_limits = np.asarray(self.upper_limits, dtype=float)
        n, p = self.Y.shape
        if self.C.shape != (n, p):
            raise ValueError("C shape does not match Y")
        if self.X.ndim != 2 or self.X.shape[0] != n:
            raise ValueError("X row count does not match Y")
        if self.lower_limits.shape != (p,) or self.upper_limits.shape != (p,):
            raise ValueError("limits must have one (lower, upper) pair per response")
        if not np.all(self.lower_limits < self.upper_limits):
            raise ValueError("each lower limit must lie strictly below its upper limit")
        if not (np.isfinite(self.Y).all() and np.isfinite(self.X).all()):
            raise ValueError("Y and X must be finite with no missing values")
        if not np.isin(self.C, (-1, 0, 1)).all():
            raise ValueError("censoring indicators must be -1, 0 or +1")
        low = self.C == -1
        high = self.C == 1
        if not np.allclose(self.Y[low], np.broadcast_to(self.lower_limits, (n, p))[low]):
            raise ValueError("left-censored entries must sit at their lower limit")
        if not np.allclose(self.Y[high], np.broadcast_to(self.upper_limits, (n, p))[high]):
            raise ValueError("right-censored entries must sit at their upper limit")
        if n >= self.X.shape[1] and np.linalg.matrix_rank(self.X) < self.X.shape[1]:
            warnings.warn("design matrix is rank deficient", stacklevel=2)
        self._groups = None

    @property
    def n(self):
        return self.Y.shape[0]

    @property
    def p(self):
        return self.Y.shape[1]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def n_censored_rows(self):
        return int(np.any(self.C != 0, axis=1).sum())

    def censored_fractions(self):
        """(left, right) censored fraction per response."""
        return (self.C == -1).mean(axis=0), (self.C == 1).mean(axis=0)

    def pattern_groups(self):
        """Rows grouped by censored-coordinate set (cached)."""
        if self._groups is None:
            self._groups = _build_groups(self.Y, self.C, self.lower_limits, self.upper_limits)
        return self._groups

    def row_subset(self, rows):
        """New dataset restricted to the given row indices."""
        rows = np.atleast_1d(np.asarray(rows, dtype=int))
        return CensoredDataset(
            self.Y[rows], self.C[rows], self.X[rows],
            self.lower_limits, self.upper_limits,
            self.response_names, self.predictor_names,
        )

    def uncensored_view(self):
        """Same responses treated as fully observed (limits opened)."""
        p = self.p
        return CensoredDataset(
            self.Y, np.zeros_like(self.C), self.X,
            np.full(p, -np.inf), np.full(p, np.inf),
            self.response_names, self.predictor_names,
        )


def _build_groups(Y, C, lower_limits, upper_limits):
    n, p = Y.shape
    cen = C != 0
    # Encode each censored set as a bit pattern for grouping.
    codes = cen @ (1 << np.arange(p))
    groups = []
    for code in np.unique(codes):
        rows = np.nonzero(codes == code)[0]
        mask = cen[rows[0]].copy()
        k = int(mask.sum())
        if k == 0:
            groups.append(PatternGroup(mask, rows, np.empty((len(rows), 0)), np.empty((len(rows), 0))))
            continue
        cdir = C[np.ix_(rows, np.nonzero(mask)[0])]
        lo = np.where(cdir == 1, upper_limits[mask], -np.inf)
        hi = np.where(cdir == -1, lower_limits[mask], np.inf)
        groups.append(PatternGroup(mask, rows, lo, hi))
    return groups


def apply_censoring(y_star, lower_limits, upper_limits):
    """Clip latent responses at their detection limits.

    Returns (Y, C) with C in {-1, 0, +1}. Values exactly at a limit are
    treated as censored at that limit. Idempotent.
    """
    y_star = np.asarray(y_star, dtype=float)
    lower = np.asarray(lower_limits, dtype=float)
    upper = np.asarray(upper_limits, dtype=float)
    C = np.zeros(y_star.shape, dtype=np.int8)
    C[y_star <= lower] = -1
    C[y_star >= upper] = 1
    Y = np.clip(y_star, lower, upper)
    return Y, C


def dataset_from_latent(y_star, X, lower_limits, upper_limits, **names):
    """Build a CensoredDataset by censoring latent responses."""
    Y, C = apply_censoring(y_star, lower_limits, upper_limits)
    return CensoredDataset(Y, C, X, lower_limits, upper_limits, **names)
