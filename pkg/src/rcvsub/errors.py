"""Exception hierarchy.

Data problems (bad files, invalid inputs) derive from :class:`DataError`;
solver and estimation failures derive from :class:`NumericalError`.  The
CLI maps the two families to distinct exit codes.
"""

from __future__ import annotations


class RcvError(Exception):
    """Base class for every error raised by this package."""

    def __init__(self, message: str, *, stage: str | None = None):
        self.stage = stage
        super().__init__(f"[{stage}] {message}" if stage else message)


class ConfigError(RcvError, ValueError):
    """Invalid tuning parameter or inconsistent configuration."""


# -- data -------------------------------------------------------------------

class DataError(RcvError, ValueError):
    pass


class SchemaError(DataError):
    """A declared column is missing from the file."""


class ParseError(DataError):
    """A cell could not be read as a finite number."""

    def __init__(self, message: str, *, row: int | None = None,
                 column: str | None = None, stage: str | None = None):
        self.row = row
        self.column = column
        super().__init__(message, stage=stage)


class EmptyDataError(DataError):
    pass


class SizeError(DataError):
    """Requested sample size is incompatible with the data."""


class BoundsError(DataError, IndexError):
    pass


class ShapeError(DataError):
    pass


class WeightError(DataError):
    pass


class InputError(DataError):
    pass


# -- numerical --------------------------------------------------------------

class NumericalError(RcvError, ArithmeticError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message: str, *, diagnostics: dict | None = None,
                 stage: str | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message, stage=stage)


class RankError(NumericalError):
    """Hessian is numerically singular even after the ridge fallback."""


class SeparationError(NumericalError):
    """Logistic fit diverges (complete or quasi-complete separation)."""


class DegenerateRiskSetError(NumericalError):
    """Cox criterion needs at least one observed event."""


class DegenerateScoreError(NumericalError):
    pass


class VarianceError(NumericalError):
    pass


class CalibrationError(NumericalError):
    pass
