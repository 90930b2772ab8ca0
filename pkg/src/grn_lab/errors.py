"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
NumericError -> 3, DataFormatError and OS-level I/O failures -> 4.
"""


class GrnLabError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(GrnLabError):
    """Invalid or inconsistent configuration (bad field, cross-field clash)."""


class NumericError(GrnLabError):
    """Non-finite values or other numerical breakdown mid-run."""


class DataFormatError(GrnLabError):
    """Malformed serialized artifact (dataset record, checkpoint, manifest)."""
