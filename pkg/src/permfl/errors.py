"""Exception hierarchy shared across the package.

CLI exit codes: configuration problems map to 2, numeric divergence to 3,
and I/O failures (OSError) to 4.
"""


class PermflError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(PermflError):
    """Invalid or inconsistent configuration, dimensions, or arguments.

    May carry a list of individual problems in ``errors`` when several
    were collected in one validation pass.
    """

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors) if errors else [message]


class NumericError(PermflError):
    """A computation produced non-finite values or diverged."""


class FormatError(PermflError):
    """Malformed input file (wrong magic, truncated payload, bad header)."""


class PartitionError(PermflError):
    """A data partition violated its invariants (empty device, overlap)."""


class EvaluationError(PermflError):
    """Metric evaluation was requested on unusable state (no validation data)."""


class UnsupportedOperationError(PermflError):
    """Operation not available for this model type."""
