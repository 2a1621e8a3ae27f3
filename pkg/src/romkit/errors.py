"""Exception hierarchy.

Every error raised by the toolkit derives from :class:`RomError`.  The CLI maps
the three families onto exit codes: validation (2), numeric failure (3) and
I/O (4).
"""


class RomError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ValidationError(RomError, ValueError):
    """Input failed a shape, range or consistency check."""

    exit_code = 2

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class ShapeError(ValidationError):
    pass


class FormatError(ValidationError):
    """Bad magic, version or layout in a binary/CSV file."""


class DataError(ValidationError):
    """Non-finite entry in a data payload."""

    def __init__(self, message, field=None, index=None):
        if index is not None:
            message = f"{message} at (row, col) = {tuple(int(i) for i in index)}"
        super().__init__(message, field)
        self.index = index


class InsufficientDataError(ValidationError):
    pass


class DegenerateDataError(ValidationError):
    pass


class NoTriangleError(ValidationError):
    pass


class IncompatibleDataError(ValidationError):
    """Database samples cannot be combined (node count, time grid...)."""

    def __init__(self, message, fields=()):
        self.fields = tuple(fields)
        if self.fields:
            message = f"{message} (mismatched: {', '.join(self.fields)})"
        super().__init__(message)


class NumericFailure(RomError, ArithmeticError):
    """A factorization did not converge or produced non-finite output."""

    exit_code = 3


class RankDeficiencyError(NumericFailure):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"{message} (row {row})"
        super().__init__(message)
        self.row = row


class RomIOError(RomError, OSError):
    exit_code = 4
