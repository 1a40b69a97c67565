"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config problems exit 1, data
problems exit 2, numeric failures exit 3.
"""


class DataError(Exception):
    """A problem with an input file's content."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        super().__init__(prefix + message)


class ParseError(DataError):
    """A single record could not be parsed."""


class FormatError(DataError):
    """The file as a whole does not match the expected layout."""


class DimensionError(ValueError):
    """Operand shapes are inconsistent."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where a finite one is required."""
