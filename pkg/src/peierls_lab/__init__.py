"""Numerical laboratory for magnetic perturbations of isolated Bloch families.

The package builds 2-D periodic Schroedinger-type lattice models, extracts an
isolated family of Bloch bands, constructs a localized Parseval frame for it,
perturbs the frame by long-range magnetic phases, and compares the resulting
effective (Peierls-type) matrices against exact truncated reference operators:
commutator, spectral-distance and time-evolution error laws in the field
strength epsilon.
"""

__version__ = "0.1.0"

from .errors import (
    ClusterSeparationError,
    ConfigError,
    GapError,
    InvariantViolation,
    MarginError,
    NumericalError,
)

__all__ = [
    "ClusterSeparationError",
    "ConfigError",
    "GapError",
    "InvariantViolation",
    "MarginError",
    "NumericalError",
]
