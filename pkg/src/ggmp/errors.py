"""Exception hierarchy shared by the library and the CLI."""


class GgmpError(Exception):
    """Base class for all package errors."""


class DataError(GgmpError, ValueError):
    """Malformed, inconsistent, or insufficient input data."""


class SchemaError(DataError):
    """A serialized model or report does not match the expected schema."""


class NumericalError(GgmpError, ArithmeticError):
    """A numerical routine failed (non-PD matrix, non-bracketing root, ...)."""


class StageError(GgmpError):
    """Failure inside one stage of the fitting pipeline.

    The original exception is kept as ``__cause__`` and ``cause``; ``stage``
    names the pipeline step that failed.
    """

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")
