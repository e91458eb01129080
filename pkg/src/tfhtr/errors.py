"""Exception hierarchy shared by every subsystem.

Each class maps to one CLI exit code (see :mod:`tfhtr.cli`).
"""


class HTRError(Exception):
    """Base class for all package errors."""

    exit_code = 2


class DimensionError(HTRError, ValueError):
    """Operand shapes are incompatible."""

    exit_code = 3


class ContractError(HTRError, ValueError):
    """A documented precondition of an operation was violated."""

    exit_code = 3


class ConfigError(HTRError, ValueError):
    """A configuration value is invalid or out of its safe range."""

    exit_code = 1


class VocabularyError(HTRError, ValueError):
    """A character is not part of the alphabet."""


class LengthError(HTRError, ValueError):
    """A text or image exceeds its configured maximum size."""


class InputError(HTRError, ValueError):
    """An input image is empty or otherwise unusable."""


class ParseError(HTRError, ValueError):
    """A manifest, alphabet or checkpoint file is malformed."""


class UndefinedMetricError(HTRError, ValueError):
    """An error rate was requested for an empty reference."""


class NumericError(HTRError, ArithmeticError):
    """A loss or gradient became non-finite."""

    exit_code = 3
