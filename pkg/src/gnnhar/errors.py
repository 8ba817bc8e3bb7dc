"""Exception hierarchy.

Each family maps to one CLI exit code: configuration problems exit with 2,
bad or insufficient data with 3, numerical failures with 4.
"""


class GnnharError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1
    kind = "error"


class ConfigError(GnnharError):
    """Invalid configuration. ``problems`` lists every violated field."""

    exit_code = 2
    kind = "config"

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class DataError(GnnharError):
    exit_code = 3
    kind = "data"


class ParseError(DataError):
    """Schema violation in an input file."""

    def __init__(self, path, line, field, message):
        self.path = str(path)
        self.line = line
        self.field = field
        super().__init__(f"{self.path}:{line}: field '{field}': {message}")


class InsufficientDataError(DataError):
    pass


class InsufficientHistoryError(DataError):
    pass


class EmptyTargetError(DataError):
    pass


class ShapeError(GnnharError, ValueError):
    exit_code = 3
    kind = "shape"


class NumericalError(GnnharError):
    exit_code = 4
    kind = "numerical"


class UnstableDGPError(NumericalError):
    pass


class RankDeficientError(NumericalError):
    def __init__(self, message, columns=()):
        self.columns = list(columns)
        super().__init__(message)


class ConvergenceError(NumericalError):
    def __init__(self, message, last_objective=None):
        self.last_objective = last_objective
        super().__init__(message)


class DivergedTrainingError(NumericalError):
    def __init__(self, message, epoch=None, step=None):
        self.epoch = epoch
        self.step = step
        super().__init__(message)


class DegenerateStatisticError(NumericalError):
    pass
