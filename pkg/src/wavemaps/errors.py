"""Exception types raised by the wavemaps package."""


class WavemapsError(Exception):
    """Base class for all package errors."""


class InvariantError(WavemapsError, ValueError):
    """A value object was constructed in violation of its invariants."""


class CFLViolation(WavemapsError, ValueError):
    def __init__(self, dt, spacing, cfl_ratio):
        super().__init__(
            f"CFL violated: dt={dt:.6g} > cfl_ratio*spacing={cfl_ratio * spacing:.6g}"
        )
        self.dt = dt
        self.spacing = spacing
        self.cfl_ratio = cfl_ratio


class BlowUp(WavemapsError, FloatingPointError):
    """NaN detected during time stepping."""


class UnresolvedLoop(WavemapsError, ValueError):
    pass


class DegreeNotResolved(WavemapsError, ValueError):
    pass


class DegenerateMode(WavemapsError, ValueError):
    pass


class NotConverged(WavemapsError, RuntimeError):
    """Iterative control synthesis did not reach the requested tolerance.

    The solver report is attached as ``report`` so callers can inspect the
    conditioning diagnostics.
    """

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class DegreeMismatch(WavemapsError, ValueError):
    pass


class CapUndefined(WavemapsError, ValueError):
    pass


class BudgetExceeded(WavemapsError, RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class DropIneffective(WavemapsError, RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(WavemapsError, ValueError):
    pass
