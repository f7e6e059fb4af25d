"""Exception hierarchy shared by all gomp modules."""


class GompError(Exception):
    """Base class for every error raised by this package."""


class UsageError(GompError, ValueError):
    """Invalid arguments or an incompatible combination of options."""


class IngestionError(GompError):
    """A data file violates the dataset invariants.

    ``row`` and ``column`` point at the offending cell when known (``row`` is
    1-based and counts the header line as row 1).
    """

    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class NumericalError(GompError):
    """A model cannot be fitted on the given data."""


class NoCandidates(GompError):
    """Raised by the candidate scan when every feature is selected or excluded."""
