"""Exception hierarchy for the olar package."""
from __future__ import annotations

from typing import Any


class OlarError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(OlarError, ValueError):
    pass


class NonFiniteEntry(OlarError, ValueError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class InvalidShape(OlarError, ValueError):
    pass


class InvalidProbability(OlarError, ValueError):
    pass


class NumericBreakdown(OlarError, ArithmeticError):
    """Rank-one inverse update hit 1 + g <= 1e-14; rebuild from the Gram matrix."""


class NotConverged(OlarError):
    """An iterative routine stopped at max_iter. ``result`` holds the last/best iterate."""

    def __init__(self, message: str, result: Any = None):
        super().__init__(message)
        self.result = result


class BudgetExhausted(OlarError):
    pass


class CapacityOverflow(OlarError):
    pass


class RankDeficientPrefix(OlarError):
    pass


class SingularPrefix(RankDeficientPrefix):
    pass


class ZeroOptimum(OlarError):
    pass


class Inconsistency(OlarError):
    pass


class DataError(OlarError):
    """Base for stream/dataset ingestion problems."""


class BadHeader(DataError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class UnexpectedEof(BadHeader):
    pass


class RaggedRow(DataError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class StreamNonFinite(DataError, NonFiniteEntry):
    pass


class MissingColumn(DataError):
    pass


class NonNumeric(DataError):
    pass
