"""Exception types shared across the package."""


class SpsidError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(SpsidError):
    """Raised when a configuration file is malformed or inconsistent."""


class DegeneracyError(SpsidError):
    """Raised when a data matrix is singular or too ill-conditioned to use."""


class UnderdeterminedError(SpsidError):
    """Raised when there are fewer samples than regressor columns."""


class UnstableTrajectoryError(SpsidError):
    """Raised when a simulated state norm exceeds the overflow guard."""


class RiccatiError(SpsidError):
    """Raised when the discrete Riccati iteration fails to converge."""
