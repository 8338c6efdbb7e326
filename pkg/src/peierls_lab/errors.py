"""Exception hierarchy; the CLI maps these onto process exit codes."""


class PeierlsLabError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigError(PeierlsLabError):
    """Invalid or inconsistent run configuration."""

    exit_code = 2


class NumericalError(PeierlsLabError):
    """A solver failed or a numerical precondition was violated."""

    exit_code = 3


class InvariantViolation(PeierlsLabError):
    """A declared invariant check failed."""

    exit_code = 4


class GapError(NumericalError):
    """The requested band family is not isolated on the grid."""


class MarginError(NumericalError):
    """A window/periodization margin precondition was violated."""


class ClusterSeparationError(NumericalError):
    """Gram eigenvalues entered the forbidden mid band; epsilon too large."""


class ResolutionError(NumericalError):
    """Discretization too coarse for the requested energy range."""
