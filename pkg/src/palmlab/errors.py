"""Exception types shared across the laboratory."""


class UsageError(ValueError):
    """Caller passed arguments that violate an operation's contract."""


class PreconditionError(UsageError):
    """A checked precondition failed; the message names a witness."""


class RangeError(UsageError):
    """A point left the simulated region (non-periodic carriers only)."""


class RetryError(RuntimeError):
    """Transient failure; the caller may resample and try again."""


class InsufficientDataError(RuntimeError):
    """Not enough samples (or conditioning mass) for a valid statistic."""
