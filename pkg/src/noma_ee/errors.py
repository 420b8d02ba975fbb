"""Exception hierarchy shared by all modules."""


class NomaError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(NomaError, ValueError):
    pass


class InvalidCallError(NomaError, ValueError):
    pass


class DivergentMomentError(NomaError, ValueError):
    """E[exp(u A)] is infinite (u * L >= 1 for exponential bursts)."""


class QuadratureError(NomaError, ArithmeticError):
    def __init__(self, message, *, n_intervals=None, estimate=None, error=None):
        super().__init__(message)
        self.n_intervals = n_intervals
        self.estimate = estimate
        self.error = error


class FormulaDomainError(NomaError, ArithmeticError):
    """Log argument of an effective-capacity formula left its domain."""


class InfeasibleDelayError(NomaError, ValueError):
    pass


class StabilityInfeasibleError(NomaError, ValueError):
    """Mean arrival rate is not below the mean service rate."""


class QosInfeasibleError(NomaError, ValueError):
    """A user cannot reach its required effective capacity even at peak power."""


class LineSearchError(NomaError, ArithmeticError):
    pass


class ConvergenceError(NomaError, RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class UndefinedStatisticError(NomaError, ValueError):
    pass


class ConfigError(NomaError, ValueError):
    def __init__(self, message, *, key=None, line=None, path=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{where}{message}")
        self.key = key
        self.line = line
        self.path = path
