"""Exception types shared across the package."""


class TumblerecError(Exception):
    """Base class for all package errors."""


class DomainError(TumblerecError, ValueError):
    """Input outside the mathematical domain of an operation."""


class GeometryError(TumblerecError, ValueError):
    """Infeasible or degenerate probe/tumble geometry."""


class ConfigurationError(TumblerecError, ValueError):
    """Invalid parameter or configuration value."""


class AdmissibilityError(TumblerecError, ValueError):
    """Coefficient field violates its declared admissibility bounds."""


class NumericsError(TumblerecError, RuntimeError):
    """Quadrature or root-finding failed to reach its tolerance."""

    def __init__(self, message, estimate=None, error_bound=None):
        super().__init__(message)
        self.estimate = estimate
        self.error_bound = error_bound


class CatalogError(TumblerecError, KeyError):
    """Unknown name requested from a builtin catalog."""


class ProbeError(TumblerecError, ValueError):
    """Probe incompatible with the requested measurement or horizon."""
