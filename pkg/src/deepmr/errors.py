"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, data errors
(FormatError and friends, IntegrityError) -> 2, JobError and anything
else -> 3.
"""


class ShapeError(ValueError):
    """Operand dimensions do not line up."""


class ConfigError(ValueError):
    """Invalid configuration: bad field value, unknown or duplicate id."""


class JobError(RuntimeError):
    """A map/reduce job aborted; the message names the failing record."""


class IntegrityError(RuntimeError):
    """Data that should be consistent is not (shuffle corruption,
    image/label count mismatch, duplicate case ids)."""


class FormatError(ValueError):
    """A serialized artifact does not parse; message carries the byte offset."""


class TruncationError(FormatError):
    """File ends before the declared payload does."""


class VersionError(FormatError):
    """Weight file written by an incompatible format version."""


class ChecksumError(FormatError):
    """Stored checksum does not match the file contents."""
