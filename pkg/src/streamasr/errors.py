"""Exception hierarchy. Each class maps to a distinct CLI exit code."""

from __future__ import annotations


class StreamASRError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(StreamASRError):
    """Invalid configuration value or combination of options."""


class ValidationError(StreamASRError):
    """Input data violates a documented invariant."""


class DegenerateInputError(ValidationError):
    """Input is structurally valid but too small to operate on."""


class CapacityError(ValidationError):
    """Content does not fit in the fixed padded input window."""


class UndefinedMetricError(ValidationError):
    """A metric is undefined for this input (e.g. empty reference)."""


class TraceFormatError(StreamASRError):
    """Base class for binary file parsing failures."""


class BadMagicError(TraceFormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(TraceFormatError):
    """File declares a format version this reader does not understand."""


class TruncatedFileError(TraceFormatError):
    """File ended in the middle of a record."""


class ChecksumError(TraceFormatError):
    """A section's CRC32 does not match its payload."""


class ReplayMissError(StreamASRError):
    """The controller asked a replay model for a step that was never
    recorded, i.e. the run diverged from the recorded configuration."""


# Exit codes used by the CLI, one per error family.
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_IO = 4
EXIT_REPLAY = 5


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, (TraceFormatError, OSError)):
        return EXIT_IO
    if isinstance(exc, ReplayMissError):
        return EXIT_REPLAY
    return EXIT_UNEXPECTED
