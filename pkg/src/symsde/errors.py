"""Exception hierarchy shared across the package."""


class SymSdeError(Exception):
    """Base class for all errors raised by symsde."""


class ConfigurationError(SymSdeError):
    """Invalid parameters, grids, coefficient declarations or mismatched inputs."""


class UnsupportedDriftError(ConfigurationError):
    """Drift has neither an analytic average nor a period, so no averaged form exists."""


class NumericalError(SymSdeError):
    """Non-finite state or overflow encountered during integration."""


class BoundViolationError(SymSdeError):
    """A declared coefficient bound was exceeded at an evaluated point."""


class InversionError(NumericalError):
    """Newton inversion of the flow failed to converge."""


class ExperimentError(SymSdeError):
    """A Monte Carlo run aborted (too many failed replicates)."""
