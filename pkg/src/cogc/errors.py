"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`CoGCError`,
so callers (the CLI in particular) can map failures to exit codes without
catching unrelated exceptions.
"""


class CoGCError(Exception):
    """Base class for all package errors."""


class InvalidParamsError(CoGCError, ValueError):
    pass


class InvalidInputError(CoGCError, ValueError):
    pass


class InvalidMaskError(InvalidInputError):
    pass


class TooManyStragglersError(CoGCError, ValueError):
    pass


class NumericalError(CoGCError, ArithmeticError):
    """Base for failures caused by floating-point linear algebra."""


class DecodeInfeasibleError(NumericalError):
    pass


class NumericalInconsistencyError(NumericalError):
    pass


class CodeGenerationError(NumericalError):
    pass


class DivergentRetriesError(NumericalError):
    pass


class UndefinedBoundError(NumericalError):
    pass


class BoundInapplicableError(NumericalError):
    pass


class InfiniteLeakageError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class DomainError(CoGCError, ValueError):
    pass


class InfeasibleTargetError(CoGCError):
    pass


class RetryExhaustedError(CoGCError, RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class NoSampleError(CoGCError, RuntimeError):
    pass
