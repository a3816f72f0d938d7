"""Exception hierarchy. The CLI maps each class to an exit code."""


class SeqmonError(Exception):
    """Base class for all package errors."""


class UsageError(SeqmonError):
    """Invalid call sequence or option combination."""


class DomainError(SeqmonError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class DataError(SeqmonError, ValueError):
    """Malformed or inconsistent input data."""


class NumericalError(SeqmonError, ArithmeticError):
    """A numerical routine failed to reach its accuracy target."""


class ConvergenceError(NumericalError):
    """An iterative search hit its iteration cap."""


class ResourceError(SeqmonError):
    """Request would exceed a documented resource limit."""
