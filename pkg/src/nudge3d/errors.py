"""Exception hierarchy."""


class Nudge3DError(Exception):
    """Base class for all package errors."""


class ConfigurationError(Nudge3DError, ValueError):
    """Invalid grid, solver, interpolant or run configuration."""


class BlowUpError(Nudge3DError, FloatingPointError):
    def __init__(self, time, message=None):
        self.time = time
        super().__init__(message or f"non-finite coefficients at t={time:.6g}")


class StabilityError(Nudge3DError):
    def __init__(self, message, time=None):
        self.time = time
        super().__init__(message)


class EndOfObservations(Nudge3DError):
    """Raised by an observation source when the requested time is past its end."""

    def __init__(self, time):
        self.time = time
        super().__init__(f"no observations available at t={time:.6g}")


class SchedulingError(Nudge3DError):
    def __init__(self, interval, message):
        self.interval = interval
        super().__init__(f"interval {interval}: {message}")


class BoundViolation(Nudge3DError):
    def __init__(self, message, time=None, interval=None):
        self.time = time
        self.interval = interval
        super().__init__(message)


class RecordFormatError(Nudge3DError, ValueError):
    """Malformed or inconsistent snapshot / observation record file."""


class RecordWriteError(Nudge3DError, OSError):
    def __init__(self, last_committed_time, cause):
        self.last_committed_time = last_committed_time
        super().__init__(f"record write failed after t={last_committed_time}: {cause}")
