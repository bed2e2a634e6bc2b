"""Exception types shared across the toolkit.

Each class carries an ``exit_code`` so the command-line layer can map
failures onto its documented exit statuses without a lookup table.
"""


class CellkitError(Exception):
    exit_code = 1


class ValidationError(CellkitError, ValueError):
    """Input violates a documented precondition."""

    exit_code = 1


class ParseError(ValidationError):
    """A file could not be parsed under its declared format."""

    def __init__(self, message, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class ShapeError(ValidationError):
    pass


class EmptyResultError(ValidationError):
    """Filtering removed every cell. ``report`` holds what was removed."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class UnknownConditionError(ValidationError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class TraceError(CellkitError, RuntimeError):
    """Backward was requested on a value with no recorded computation."""


class NumericalError(CellkitError, ArithmeticError):
    exit_code = 3


class TrainingDivergedError(NumericalError):
    """Raised when a training loss turns non-finite.

    ``checkpoint`` holds the parameters from the last finite step.
    """

    def __init__(self, message, checkpoint=None, history=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history or []
