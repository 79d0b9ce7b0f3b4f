"""Exception types shared across the package.

Each error carries the CLI exit code it maps to so the command-line layer can
translate failures without a lookup table.
"""


class MtlError(Exception):
    exit_code = 1


class DimensionError(MtlError, ValueError):
    """Shapes of matrices, masks or inputs do not line up."""

    exit_code = 2


class ConfigError(MtlError, ValueError):
    exit_code = 1


class DataError(MtlError, ValueError):
    exit_code = 2


class NumericError(MtlError, ArithmeticError):
    """A non-finite value appeared, or an iterative solve failed to bracket."""

    exit_code = 3

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class DomainError(NumericError):
    """Objective evaluated outside its domain (e.g. zero power in a delay term)."""
