"""Concurrent global-local finite elements for multiscale parabolic problems.

The hybrid coefficient uses the microscale coefficient inside a defect region
``K`` and an effective (homogenized) coefficient elsewhere. The resulting
parabolic problem is discretized with P1 elements and backward Euler.
"""

from glocal.exceptions import (
    CapacityError,
    ConfigurationError,
    DefinitenessError,
    DegenerateReferenceError,
    EllipticityError,
    GeometryError,
    GlocalError,
    MeshError,
    SolverError,
)

__all__ = [
    "CapacityError",
    "ConfigurationError",
    "DefinitenessError",
    "DegenerateReferenceError",
    "EllipticityError",
    "GeometryError",
    "GlocalError",
    "MeshError",
    "SolverError",
]

__version__ = "0.1.0"
