"""Exception hierarchy shared by all modules."""


class SVPiolaError(Exception):
    """Base class for library errors."""


class ConstructionError(SVPiolaError):
    """A rule, element, or space could not be built."""


class ProjectionError(SVPiolaError):
    """Closest-point projection onto the boundary did not converge."""


class GeometryError(SVPiolaError):
    """Invalid mesh or element geometry (non-positive Jacobian, bad topology)."""

    def __init__(self, message, element=None):
        super().__init__(message)
        self.element = element


class DomainError(SVPiolaError, ValueError):
    """Evaluation point outside the reference triangle."""


class SolverError(SVPiolaError):
    """Linear solve failed or missed its residual contract."""


class ConfigError(SVPiolaError, ValueError):
    """Invalid study configuration."""
