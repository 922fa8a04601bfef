"""Exception taxonomy shared by all solver and I/O modules."""


class NlochError(Exception):
    """Base class for all package errors."""


class NonConvergence(NlochError):
    """An iterative linear solve hit its iteration cap before reaching tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class InvalidKernel(NlochError):
    """Kernel table violates a structural requirement (sign, evenness)."""


class GridMismatch(NlochError):
    """Operands live on different grids."""


class ShapeMismatch(NlochError):
    """Array shapes are incompatible with the requested operation."""


class DomainViolation(NlochError):
    """A singular potential was evaluated outside its admissible interval.

    For the logarithmic well this signals loss of the separation property:
    the phase field has left the open interval where the potential is finite.
    """

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class StepRejected(NlochError):
    """A time step failed (separation violated or linear solve diverged)."""

    def __init__(self, message, step=None, diagnostics=None):
        super().__init__(message)
        self.step = step
        self.diagnostics = diagnostics or {}


class RegimeViolation(NlochError):
    """Requested operation is incompatible with the relaxation regime."""


class MaxIterations(NlochError):
    """Optimizer reached its iteration cap without meeting the stationarity tolerance."""


class ConfigInvalid(NlochError):
    """Configuration failed validation; carries the failed clause list."""

    def __init__(self, message, failed=None):
        super().__init__(message)
        self.failed = list(failed or [])
