"""Exception hierarchy. The CLI maps each family to an exit code."""


class RdaeError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ArgumentError(RdaeError, ValueError):
    exit_code = 2


class DataError(RdaeError):
    exit_code = 3


class FormatError(DataError):
    """Malformed file contents (bad header, truncated record, wrong magic)."""


class UnsupportedFormatError(FormatError):
    """Well-formed input whose encoding or layout this package does not handle."""


class DegenerateInputError(DataError):
    """Input that carries no usable signal (zero power, all-silent noise)."""


class StratificationError(DataError):
    """Not enough material per speaker to build a stratified fold plan."""


class NumericError(RdaeError, ArithmeticError):
    exit_code = 4
