"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, ArtifactError -> 3,
NumericalError -> 4.
"""


class RobustcheckError(Exception):
    """Base class for all robustcheck failures."""


class ConfigError(RobustcheckError):
    """Invalid run configuration or malformed input data."""


class DataError(ConfigError):
    """A data file violates its declared schema."""


class ArtifactError(RobustcheckError):
    """A required upstream artifact is missing or unreadable."""


class NumericalError(RobustcheckError):
    """Numerical failure: divergence, degenerate geometry, empty neighbourhood."""
