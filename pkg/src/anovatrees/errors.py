"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class AnovaTreesError(Exception):
    """Base class for package errors."""


class UsageError(AnovaTreesError):
    """Bad command-line arguments or configuration."""


class ConfigError(UsageError):
    """Invalid configuration values. Collects every offending key."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration: " + "; ".join(self.problems))


class DataError(AnovaTreesError):
    """Unusable input data (missing files, malformed columns, shape mismatch)."""


class NumericError(AnovaTreesError):
    """Numeric failure during sampling (NaN/Inf, degenerate posterior)."""


class AuditError(NumericError):
    """Residual cache drifted away from its definition."""
