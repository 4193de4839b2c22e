"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures without
inspecting messages: 2 for data/format problems, 3 for numerical ones.
"""
from __future__ import annotations


class SeqforgeError(Exception):
    exit_code = 2


class FormatError(SeqforgeError):
    """Malformed file. ``field`` names the offending header field or record."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class UnsupportedTypeError(FormatError):
    pass


class DataError(SeqforgeError):
    """Invalid voxel values. ``index`` is the (i, j, k) voxel when known."""

    def __init__(self, message: str, index: tuple[int, ...] | None = None):
        super().__init__(message)
        self.index = index


class GeometryError(SeqforgeError):
    pass


class SpecError(SeqforgeError):
    pass


class DegenerateInputError(SeqforgeError):
    pass


class SampleSizeError(SeqforgeError):
    pass


class DomainError(SeqforgeError):
    pass


class NumericalError(SeqforgeError):
    exit_code = 3


class SingularityError(NumericalError):
    pass


class RangeError(NumericalError):
    pass


class RankError(NumericalError):
    pass


class DegeneracyError(NumericalError):
    def __init__(self, message: str, component: int | None = None):
        super().__init__(message)
        self.component = component


class IllConditionedError(NumericalError):
    def __init__(self, message: str, condition_number: float = float("inf")):
        super().__init__(message)
        self.condition_number = condition_number
