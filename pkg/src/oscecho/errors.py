"""Exception types shared across the package."""


class OscEchoError(Exception):
    """Base class for all package-specific errors."""


class DomainError(OscEchoError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class InvariantViolation(OscEchoError, ValueError):
    """A state or covariance failed a structural invariant (e.g. positivity)."""


class ConfigurationError(OscEchoError, ValueError):
    """Invalid run configuration (bad field value, unknown key, accuracy floor)."""


class InsufficientDataError(OscEchoError, ValueError):
    """Too few data points for the requested estimator."""


class UnidentifiableError(OscEchoError, ValueError):
    """The data carry no information about the requested fit parameter."""


class FitFailureError(OscEchoError, RuntimeError):
    """A fit could not be completed (e.g. no bracket for the 1-D minimizer)."""
