"""Exception hierarchy. CLI exit codes: validation errors map to 2,
numerical/solver failures to 3."""


class ExoloadError(Exception):
    """Base class for all package errors."""


class ValidationError(ExoloadError):
    """Malformed input, schema violation, or inconsistent configuration."""


class NumericalError(ExoloadError):
    """A computation failed to produce a usable result."""


class SolverError(NumericalError):
    """The QP solver did not converge."""


class InfeasibleBoundsError(SolverError):
    """Velocity bounds admit no feasible point."""
