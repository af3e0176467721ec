"""Exception types raised across the package."""


class PathLassoError(Exception):
    """Base class for all package errors."""


class ShapeError(PathLassoError, ValueError):
    pass


class NumericError(PathLassoError, ArithmeticError):
    pass


class ConfigError(PathLassoError, ValueError):
    pass


class CapacityError(PathLassoError, ValueError):
    pass


class ParseError(PathLassoError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class UndefinedMetricError(PathLassoError, ValueError):
    pass


class TrainingError(PathLassoError, RuntimeError):
    """Training failed; ``stage`` and ``step`` say where."""

    def __init__(self, message, stage=None, step=None, diagnostics=None):
        super().__init__(message)
        self.stage = stage
        self.step = step
        self.diagnostics = diagnostics or {}
