"""Exception types raised by bincomp."""


class BinCompError(Exception):
    """Base class for algorithmic failures (CLI exit code 2)."""


class RankDeficient(BinCompError):
    pass


class DimensionMismatch(BinCompError, ValueError):
    pass


class ConvergenceFailure(BinCompError):
    pass


class RankMismatch(BinCompError):
    """Detected affine/linear dimension differs from the requested rank."""


class CandidateOverflow(BinCompError):
    """Number of candidate code bits exceeds the enumeration cap."""


class NoExactFactorization(BinCompError):
    pass


class AmbiguousSelection(BinCompError):
    """Simplex-mode subset search exhausted its budget."""


class DegenerateRows(BinCompError):
    """No well-conditioned anchor row subset found within the retry budget."""


class ParseError(ValueError):
    """Malformed matrix file. ``row`` and ``column`` are 1-based."""

    def __init__(self, message, row=None, column=None):
        where = ""
        if row is not None:
            where = f" (row {row}" + (f", column {column})" if column is not None else ")")
        super().__init__(message + where)
        self.row = row
        self.column = column


class RaggedRows(ParseError):
    pass
