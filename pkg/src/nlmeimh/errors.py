"""Exception hierarchy shared across the package."""


class NlmeError(Exception):
    """Base class for all errors raised by nlmeimh."""


class FactorizationError(NlmeError, ValueError):
    """Raised when a covariance matrix is not positive definite.

    Parameters
    ----------
    pivot : int
        Zero-based index of the first pivot that was not strictly positive.
    """

    def __init__(self, pivot, message=None):
        self.pivot = pivot
        if message is None:
            message = f"matrix is not positive definite (pivot {pivot} <= 0)"
        super().__init__(message)


class DomainError(NlmeError, ValueError):
    """Structural model evaluated outside its parameter domain."""


class EvaluationError(NlmeError, ArithmeticError):
    """Structural model returned a non-finite prediction."""

    def __init__(self, time_index, message=None):
        self.time_index = time_index
        if message is None:
            message = f"non-finite prediction at time index {time_index}"
        super().__init__(message)


class JacobianError(NlmeError, ArithmeticError):
    """Non-finite derivative estimate at entry (time index, coordinate)."""

    def __init__(self, entry, message=None):
        self.entry = tuple(entry)
        if message is None:
            message = f"non-finite Jacobian entry at (time, coordinate) = {self.entry}"
        super().__init__(message)


class ProposalError(NlmeError):
    """Proposal covariance could not be factorized even after jitter."""


class NotConvergedError(NlmeError):
    """A MAP estimate was used for proposal construction before converging."""


class DataFormatError(NlmeError, ValueError):
    """Malformed data file; ``line`` is the 1-based line number."""

    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")
