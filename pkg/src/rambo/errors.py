"""Exception types raised by the engine."""


class InputError(ValueError):
    """Malformed argument: wrong dimension, out-of-bounds point, bad config value."""


class NumericalError(ArithmeticError):
    """A linear-algebra step failed even after jitter escalation.

    ``condition`` carries the estimated condition number of the offending
    matrix when it could be computed.
    """

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message)
        self.condition = condition


class TraceIOError(OSError):
    """Writing run artifacts failed; the message names the offending path."""
