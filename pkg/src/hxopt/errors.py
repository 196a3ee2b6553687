"""Exception types shared across the package."""


class HxoptError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(HxoptError, ValueError):
    """A caller violated a precondition (bad mesh size, unknown tag, ...)."""


class AssemblyFailure(HxoptError):
    """An element kernel produced non-finite entries."""

    def __init__(self, message, cell=None):
        super().__init__(message)
        self.cell = cell


class SingularSystemError(HxoptError):
    """Sparse factorization hit a (numerically) singular matrix."""

    def __init__(self, message, pivot_info=None):
        super().__init__(message)
        self.pivot_info = pivot_info


class SolverFailure(HxoptError):
    """A nonlinear or linear solve did not reach its tolerance."""

    def __init__(self, message, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class DegenerateStabilizationError(HxoptError):
    """All terms of a stabilization parameter vanished simultaneously."""


class NoInterfaceError(HxoptError):
    """The level set has lost one phase: no sign change anywhere."""


class AdvectionFailure(HxoptError):
    """Pseudo-time stepping underflowed the minimum step size."""


class ReinitFailure(HxoptError):
    """Picard iteration for the signed-distance solve did not converge."""

    def __init__(self, message, update_norms=None):
        super().__init__(message)
        self.update_norms = list(update_norms or [])


class DegenerateConstraintsError(HxoptError):
    """Constraint velocity Gram matrix is singular."""


class ConfigError(HxoptError):
    """Malformed configuration file; carries a line number when known."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
