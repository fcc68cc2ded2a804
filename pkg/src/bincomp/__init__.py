"""Low-rank factorization ``D ~ T A`` with a binary {0,1} left factor."""

__version__ = "0.1.0"

from .errors import (
    AmbiguousSelection,
    BinCompError,
    CandidateOverflow,
    ConvergenceFailure,
    DegenerateRows,
    DimensionMismatch,
    NoExactFactorization,
    ParseError,
    RaggedRows,
    RankDeficient,
    RankMismatch,
)
from .factorization import (
    ApproxConfig,
    FactorModel,
    block_descent,
    factorize_approximate,
    factorize_exact,
    factorize_three_way,
    find_vertices_approximate,
    update_T_rows,
)
from .vertices import VertexSet, find_vertices_affine, find_vertices_span

__all__ = [
    "AmbiguousSelection", "ApproxConfig", "BinCompError", "CandidateOverflow",
    "ConvergenceFailure", "DegenerateRows", "DimensionMismatch", "FactorModel",
    "NoExactFactorization", "ParseError", "RaggedRows", "RankDeficient", "RankMismatch",
    "VertexSet", "block_descent", "factorize_approximate", "factorize_exact",
    "factorize_three_way", "find_vertices_affine", "find_vertices_approximate",
    "find_vertices_span", "update_T_rows",
]
