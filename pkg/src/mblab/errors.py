"""Exception types raised across the package."""


class MBLabError(Exception):
    """Base class for all package errors."""


class DimensionError(MBLabError, ValueError):
    """Array shapes or lengths do not agree."""


class SizeLimitError(MBLabError):
    """An exhaustive computation would exceed its configured limit."""


class LPParseError(MBLabError, ValueError):
    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class InfeasibleSolutionError(MBLabError):
    """An imported solution does not pick exactly one action per actor."""


class InfeasibleLPError(MBLabError):
    pass


class UnboundedLPError(MBLabError):
    pass


class ZeroDivergenceError(MBLabError):
    """A suboptimal action is indistinguishable from the optimal one (KL = 0)."""


class SolverError(MBLabError):
    pass


class ConfigError(MBLabError, ValueError):
    pass
