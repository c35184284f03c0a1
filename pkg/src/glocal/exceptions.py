"""Exception hierarchy shared by all modules."""


class GlocalError(Exception):
    """Base class for errors raised by this package."""


class CapacityError(GlocalError):
    """A mesh or system would exceed the configured size cap."""


class GeometryError(GlocalError):
    """Invalid or unresolvable geometry (shapes, point location, cell boxes)."""


class MeshError(GlocalError):
    """Degenerate or malformed mesh data."""


class ConfigurationError(GlocalError):
    """Invalid experiment or operator configuration."""


class EllipticityError(ConfigurationError):
    """Coefficient parameters violate uniform ellipticity."""


class DegenerateReferenceError(GlocalError):
    """A relative error was requested against a reference with zero norm."""


class SolverError(GlocalError):
    """Linear solver failed to converge."""

    def __init__(self, message, residual=None, step=None):
        super().__init__(message)
        self.residual = residual
        self.step = step


class DefinitenessError(SolverError):
    """CG breakdown: the operator is not positive definite."""

    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration
