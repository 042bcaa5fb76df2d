"""Exception types shared across the simulator."""


class TelesimError(Exception):
    """Base class for all telesim errors."""


class JointLimitError(TelesimError, ValueError):
    """A joint state violates the arm's configured limits."""


class IKConvergenceError(TelesimError):
    """The IK solver failed to reach the target within its iteration budget.

    Carries the best residual seen so callers can distinguish "almost there"
    from "hopelessly unreachable".
    """

    def __init__(self, message: str, best_residual: float):
        super().__init__(message)
        self.best_residual = best_residual


class InvalidIntervalError(TelesimError, ValueError):
    """An end timestamp precedes its start timestamp."""


class ConditionConfigError(TelesimError, ValueError):
    """A sensory-manipulation condition was requested with invalid delays."""


class MisconfigurationError(TelesimError, ValueError):
    """An operation was requested under a condition that does not support it."""


class ClockMonotonicityError(TelesimError):
    """The simulated clock was observed running backwards."""


class InfeasibleBufferError(TelesimError, ValueError):
    """A synchronization buffer cannot meet a target below its intrinsic delay."""


class UnusableTraceError(TelesimError, ValueError):
    """A pupil trace contains no usable samples."""


class InsufficientBaselineError(TelesimError, ValueError):
    """A pupil trace has too few valid samples to establish a baseline."""


class LogFormatError(TelesimError, ValueError):
    """A trial log file is malformed or has an unsupported format version."""


class ProtocolError(TelesimError):
    """A wire frame could not be decoded.

    ``offset`` is the byte offset (within the connection stream) at which
    decoding failed.
    """

    def __init__(self, message: str, offset: int = 0):
        super().__init__(message)
        self.offset = offset
