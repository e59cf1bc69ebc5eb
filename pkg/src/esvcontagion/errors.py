"""Exception hierarchy shared by every stage of the pipeline."""


class EsvContagionError(Exception):
    """Base class for all package errors."""


class ValidationError(EsvContagionError):
    """Bad inputs or configuration (CLI exit code 2)."""


class NumericError(EsvContagionError):
    """A computation failed numerically (CLI exit code 3)."""


# ingest
class ParseError(ValidationError):
    def __init__(self, message, row=None, column=None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.row = row
        self.column = column


class EmptyFile(ValidationError):
    pass


class NonPositivePrice(ValidationError):
    pass


class EmptyIntersection(ValidationError):
    pass


# filtering / estimation
class NonFiniteLikelihood(NumericError):
    def __init__(self, message, index=None):
        super().__init__(message if index is None else f"{message} at t={index}")
        self.index = index


class NonConvergence(NumericError):
    pass


class HessianNotPD(RuntimeWarning):
    """Issued (not raised) when standard errors cannot be computed."""


class ParticleDegeneracy(NumericError):
    def __init__(self, message, index=None, grid_point=None):
        parts = [message]
        if index is not None:
            parts.append(f"t={index}")
        if grid_point is not None:
            parts.append(f"grid point {grid_point}")
        super().__init__(", ".join(parts))
        self.index = index
        self.grid_point = grid_point


class MassLeak(NumericError):
    pass


class LengthMismatch(ValidationError):
    pass


# diagnostics
class SampleTooSmall(ValidationError):
    pass


class SeriesMismatch(ValidationError):
    pass


# factors / contagion
class DegenerateRegressor(NumericError):
    pass


class DateMismatch(ValidationError):
    pass


class RankDeficient(NumericError):
    def __init__(self, message, column=None):
        super().__init__(message if column is None else f"{message}: {column}")
        self.column = column


class EmptyWindow(ValidationError):
    pass


class ConstantWindow(NumericError):
    """Correlation undefined because one side is constant over the window."""


class StageFailed(EsvContagionError):
    """A pipeline stage failed; ``cause`` holds the underlying error."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
