"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PyrcpdError(Exception):
    exit_code = 1


class ConfigError(PyrcpdError):
    exit_code = 2


class DimensionError(ConfigError, ValueError):
    """Operand shapes are inconsistent."""


class DataError(PyrcpdError):
    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, row=None, col=None):
        loc = ""
        if row is not None:
            loc = f" (row {row}" + (f", col {col})" if col is not None else ")")
        super().__init__(message + loc)
        self.row = row
        self.col = col


class GenerationError(DataError):
    pass


class DegenerateInputError(DataError, ValueError):
    """Input too short for the requested transform."""


class NumericError(PyrcpdError, FloatingPointError):
    exit_code = 4


class DivergenceError(NumericError):
    def __init__(self, step, loss):
        super().__init__(f"loss diverged at step {step}: {loss!r}")
        self.step = step
        self.loss = loss
