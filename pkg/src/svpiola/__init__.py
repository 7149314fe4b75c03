"""Divergence-free isoparametric Scott-Vogelius elements with Piola-mapped velocities."""
from .errors import (ConfigError, ConstructionError, DomainError, GeometryError,
                     ProjectionError, SolverError, SVPiolaError)
from .geometry import ManufacturedSolution, SmoothDomain, exact_fields, project_to_boundary
from .reference import build_reference_element, gauss_lobatto_rule, triangle_quadrature
from .mesh import build_geometry_maps, generate_ellipse_mesh, read_mesh, write_mesh
from .spaces import build_spaces, interpolate
from .system import assemble, interpolate_source, solve
from .analysis import compute_rates, error_norms, infsup_constant

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConstructionError", "DomainError", "GeometryError", "ProjectionError",
    "SolverError", "SVPiolaError", "ManufacturedSolution", "SmoothDomain", "exact_fields",
    "project_to_boundary", "build_reference_element", "gauss_lobatto_rule", "triangle_quadrature",
    "build_geometry_maps", "generate_ellipse_mesh", "read_mesh", "write_mesh", "build_spaces",
    "interpolate", "assemble", "interpolate_source", "solve", "compute_rates", "error_norms",
    "infsup_constant",
]
