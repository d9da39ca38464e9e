"""Exception types shared across the package."""


class HJBKitError(Exception):
    """Base class for all package errors."""


class GridError(HJBKitError, ValueError):
    """Invalid grid construction or operands living on different grids."""


class AssumptionError(HJBKitError, ValueError):
    """A model's standing hypothesis fails for the supplied parameters.

    Raised at spec construction time (e.g. the finite-utility discount
    condition, or the growth condition that guarantees a positive
    characteristic root).  The message states the violated inequality
    with the offending numbers.
    """


class DomainError(HJBKitError, ValueError):
    """A state lies outside the open set where the value function is defined."""


class DomainExitError(HJBKitError, RuntimeError):
    """A closed-loop trajectory left the value function's domain.

    Attributes
    ----------
    time : float
        Simulation time of the first offending step.
    diagnostics : dict
        State summary at exit (model specific).
    """

    def __init__(self, message, time, diagnostics=None):
        super().__init__(message)
        self.time = time
        self.diagnostics = diagnostics or {}


class NumericsError(HJBKitError, RuntimeError):
    """A numerical routine failed: singular solve, stalled iteration,
    or a violated discrete maximum principle."""


class ConfigError(HJBKitError, ValueError):
    """Invalid scenario configuration (unknown key, missing key, bad range)."""
