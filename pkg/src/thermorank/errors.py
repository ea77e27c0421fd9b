"""Exception hierarchy.

Input problems (bad files, malformed records, bad configuration) derive from
:class:`InputError`; everything that goes wrong while computing derives from
:class:`ProcessingError`.  The CLI maps the two families to exit codes 2 and 3.
"""

from __future__ import annotations


class ThermorankError(Exception):
    """Base class for all package errors."""

    kind = "error"


class InputError(ThermorankError):
    kind = "input_error"


class ProcessingError(ThermorankError):
    kind = "processing_error"


class MissingFileError(InputError, FileNotFoundError):
    """A referenced file or directory does not exist."""

    kind = "missing_file"

    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"no such file: {self.path}")


class AnnotationParseError(InputError):
    """A record in an annotation or artifact file is malformed."""

    kind = "parse_error"

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)


class ImageFormatError(InputError):
    kind = "format_error"


class SchemaError(InputError):
    kind = "schema_error"


class ConfigError(InputError, ValueError):
    kind = "config_error"


class DomainError(ProcessingError, ValueError):
    """A mathematical precondition does not hold."""

    kind = "domain_error"


class CapacityError(ProcessingError):
    kind = "capacity_error"


class PreconditionError(ProcessingError):
    kind = "precondition_error"


class NumericError(ProcessingError, ArithmeticError):
    kind = "numeric_error"
