"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: UsageError -> 1, DataError (and
subclasses) -> 2, anything else -> 3.
"""


class LocmodeError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(LocmodeError):
    """Bad command line or configuration string."""


class DataError(LocmodeError):
    """Problem with user-supplied data (files, matrices, labels)."""


class ParseError(DataError):
    """A file could not be parsed; the message names the offending line."""


class ShapeError(DataError):
    """Array arguments have inconsistent or unexpected shapes."""


class AmbiguityError(DataError):
    """A window's missing modality cannot be determined uniquely."""


class SchemaError(DataError):
    """Feature matrix does not match the schema a model was trained on."""


class ValidationError(DataError):
    """Invalid values in inputs (NaNs, empty labels, bad parameters)."""
