"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: config/input problems exit 2,
guard refusals exit 3, everything else exits 1.
"""


class DcfkitError(Exception):
    """Base class for all toolkit errors."""


class SchemaError(DcfkitError):
    """Input file violates the expected schema (missing column, bad header)."""


class DataError(DcfkitError):
    """Data violates an operation's precondition (empty input, bad grouping)."""


class FilterError(DataError):
    """Iterative filtering eliminated the dataset; carries the removal trace."""

    def __init__(self, message, trace=()):
        super().__init__(message)
        self.trace = tuple(trace)


class FitError(DcfkitError):
    """Model estimation failed (degenerate course, non-finite likelihood)."""


class ConfigError(DcfkitError):
    """Run configuration is invalid or inconsistent."""


class GuardError(DcfkitError):
    """A guard refused to run an analysis whose preconditions are not met."""
