"""Exception hierarchy shared by all metagad modules.

The CLI maps these onto exit codes: configuration problems exit with 2,
numeric divergence with 3 and file/format problems with 4.
"""


class MetaGADError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(MetaGADError, ValueError):
    exit_code = 2


class DimensionError(MetaGADError, ValueError):
    """Array shapes do not line up."""

    exit_code = 2


class DomainError(MetaGADError, ValueError):
    """A quantity is undefined for the given input (e.g. empty sets)."""

    exit_code = 2


class UndefinedMetricError(DomainError):
    pass


class NumericError(MetaGADError, FloatingPointError):
    """Non-finite values appeared in parameters, gradients or losses."""

    exit_code = 3


class DivergenceError(NumericError):
    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class MissingGradientError(MetaGADError, KeyError):
    exit_code = 3


class GraphFormatError(MetaGADError, ValueError):
    """Malformed input file; carries the offending 1-based line number."""

    exit_code = 4

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class NodeIndexError(GraphFormatError, IndexError):
    pass


class FeatureValidationError(GraphFormatError):
    pass
