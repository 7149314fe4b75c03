import functools

import numpy as np
import pytest
from hypothesis import settings

from svpiola import (build_geometry_maps, build_spaces, exact_fields, generate_ellipse_mesh,
                     interpolate_source)
from svpiola.geometry import SmoothDomain
from svpiola.mesh import AffineMesh
from svpiola.system import assemble, solve

settings.register_profile("svpiola", deadline=None, max_examples=40)
settings.load_profile("svpiola")

DOMAIN = SmoothDomain(1.5, 1.0)
EXACT = exact_fields(DOMAIN, 1.0)
ACCEPTANCE = []  # PASS/FAIL lines from the acceptance criteria


@functools.lru_cache(maxsize=None)
def spaces(level, k=3, mode="piola", placement="gauss-lobatto", geo="curved"):
    mesh = build_geometry_maps(generate_ellipse_mesh(DOMAIN, level), k, geo)
    V, Q = build_spaces(mesh, k, mode, placement)
    return mesh, V, Q


@functools.lru_cache(maxsize=None)
def solved(level, k=3, mode="piola", placement="gauss-lobatto", geo="curved", nu=1.0):
    _, V, Q = spaces(level, k, mode, placement, geo)
    ex = EXACT if nu == 1.0 else exact_fields(DOMAIN, nu)
    system = assemble(V, Q, nu, interpolate_source(ex.source, V))
    return system, solve(system)


def single_triangle(vertices=((1.0, 0.0), (0.0, 1.0), (0.0, 0.0))):
    """One affine triangle, every vertex flagged as boundary."""
    return AffineMesh(np.array(vertices), np.array([[0, 1, 2]]), np.ones(3, dtype=bool), DOMAIN)


def two_triangles():
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return AffineMesh(v, np.array([[0, 1, 2], [0, 2, 3]]), np.ones(4, dtype=bool), DOMAIN)


def curved_elements(mesh):
    return np.nonzero(mesh.curved)[0]


def interior_edge_between(mesh, curved_side):
    """An interior edge whose two triangles are (curved, affine) or (affine, affine)."""
    aff = mesh.affine
    for e in np.nonzero(~aff.boundary_edges)[0]:
        t1, t2 = aff.edge_triangles[e]
        kinds = {bool(mesh.curved[t1]), bool(mesh.curved[t2])}
        if curved_side and kinds == {True, False}:
            return int(e)
        if not curved_side and kinds == {False}:
            return int(e)
    raise LookupError


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
