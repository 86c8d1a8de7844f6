"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes (see ``choreoforge.cli``).
"""


class ChoreoError(Exception):
    """Base class for all package errors."""


class ContractError(ChoreoError, ValueError):
    """A precondition of an operation was violated (shapes, ranges, sizes)."""


class ConfigError(ContractError):
    """Invalid run configuration."""


class FormatError(ChoreoError, ValueError):
    """Malformed on-disk or in-memory data."""


class CheckpointError(FormatError):
    """A checkpoint could not be found or decoded."""


class WavParseError(FormatError):
    pass


class BadMagicError(WavParseError):
    pass


class UnsupportedCodecError(WavParseError):
    pass


class TruncatedChunkError(WavParseError):
    pass


class EmptyAudioError(WavParseError):
    pass


class NumericError(ChoreoError, ArithmeticError):
    """Non-finite values where finite ones are required."""
