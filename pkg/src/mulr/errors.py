"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, DataError
exits 2, NumericError exits 3.
"""


class MulrError(Exception):
    """Base class for package errors."""


class DataError(MulrError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """A file could not be parsed; carries the offending line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class NumericError(MulrError):
    """Non-finite values or shape mismatches in numeric code."""
