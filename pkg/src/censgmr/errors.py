"""Exception types shared across the package."""


class CensGmrError(Exception):
    """Base class for package-specific failures."""


class FactorizationError(CensGmrError):
    """Covariance could not be Cholesky-factorized, even after ridge repair."""


class DegenerateRegionError(CensGmrError):
    """Truncation region carries numerically negligible probability mass.

    The computed mass is attached so callers can report it.
    """

    def __init__(self, mass, message=None):
        self.mass = float(mass)
        super().__init__(message or f"truncation region has mass {self.mass:.3e}")


class ComponentCollapseError(CensGmrError):
    """A mixture component lost its effective sample during the M-step."""

    def __init__(self, component, effective_n, message=None):
        self.component = int(component)
        self.effective_n = float(effective_n)
        super().__init__(
            message
            or f"component {component} collapsed (effective n = {effective_n:.3g})"
        )


class FitFailureError(CensGmrError):
    """No restart of a fit produced a usable solution."""

    def __init__(self, message, restart_summaries=None):
        self.restart_summaries = restart_summaries or []
        super().__init__(message)
