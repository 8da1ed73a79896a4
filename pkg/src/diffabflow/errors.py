"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class DiffABFlowError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DiffABFlowError):
    """Invalid or inconsistent run configuration."""


class DataError(DiffABFlowError):
    """Missing, malformed, or inconsistent dataset content."""


class NumericError(DiffABFlowError):
    """Non-finite values or other numeric failures during training/inference."""


class SampleFormatError(DataError):
    """Malformed on-disk sample file. Subclasses carry a stable ``code``."""

    code = "format"


class MagicNumberError(SampleFormatError):
    code = "bad_magic"


class TruncatedFileError(SampleFormatError):
    code = "truncated"


class DimensionMismatchError(SampleFormatError):
    code = "dim_mismatch"


class CheckpointError(DiffABFlowError):
    """Checkpoint does not match the model built from the run config."""
