"""Exception hierarchy shared by every module of the package."""


class Svtr2Error(Exception):
    """Base class for all package errors."""


class ShapeError(Svtr2Error, ValueError):
    """Tensor extents are incompatible with an operation."""


class ConfigError(Svtr2Error, ValueError):
    """A model or training configuration is invalid."""


class ContractError(Svtr2Error, RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class StateError(Svtr2Error, ValueError):
    """Optimizer state does not match the parameters it is applied to."""


class NonFiniteError(Svtr2Error, FloatingPointError):
    """A NaN or Inf was produced while debug checking is enabled."""


class InputError(Svtr2Error, ValueError):
    """User-supplied data is invalid."""


class ParseError(InputError):
    """A text file could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownCharacterError(InputError):
    """A label contains a character that is missing from the charset."""


class FormatError(Svtr2Error, ValueError):
    """A binary file has the wrong magic, version or layout."""


class ModeError(Svtr2Error, RuntimeError):
    """An operation is not available in the model's current mode."""


class InfeasibleAlignmentError(Svtr2Error, ValueError):
    """The CTC label cannot be aligned to the available frames."""


class SizeError(Svtr2Error, ValueError):
    """A problem instance is too large for the requested routine."""


class TruncatedFileError(Svtr2Error, OSError):
    """A binary file ended before its declared contents."""


class CharsetMismatchError(ConfigError):
    """A checkpoint was trained with a different character set."""
