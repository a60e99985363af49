"""Exception hierarchy for bwn."""


class BwnError(Exception):
    """Base class for all library errors."""


class InvalidSizeError(BwnError, ValueError):
    """Truncation size outside the admissible range."""


class InvalidParameterError(BwnError, ValueError):
    pass


class InvalidTimeError(InvalidParameterError):
    pass


class ResolventSetError(InvalidParameterError):
    """Spectral parameter not in the resolvent set."""


class DomainError(BwnError, ValueError):
    """Vector outside the closure of the operator domain (nonzero boundary part)."""


class ConfigurationError(BwnError, ValueError):
    pass


class UsageError(BwnError, ValueError):
    pass


class TruncationError(BwnError, ValueError):
    """Spectral truncation too small for the requested accuracy.

    ``required_K`` carries an estimate of a sufficient truncation when known.
    """

    def __init__(self, message, required_K=None):
        super().__init__(message)
        self.required_K = required_K


class NumericalFailure(BwnError, ArithmeticError):
    """An iterative numerical procedure did not converge."""
