"""Global velocity (Piola or standard isoparametric) and pressure spaces."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstructionError
from .kernels import KernelTables, field_values
from .mesh import CurvedMesh
from .reference import EDGES, ReferenceMacroElement, build_reference_element, plain_triangle

__all__ = [
    "VelocitySpace",
    "PressureSpace",
    "build_spaces",
    "shape_eval",
    "normal_trace_check",
    "interpolate",
    "conforming_relative",
    "point_tables",
    "edge_traces",
]

VELOCITY_MODES = ("piola", "standard-isoparametric")


def point_tables(ref: ReferenceMacroElement, geo_degree: int, points, weights=None) -> KernelTables:
    """Kernel tables at arbitrary reference points (each located in its CT cell)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    Q, M = len(points), ref.num_nodes
    npc = ref.pressure_dim_per_cell
    L = np.zeros((Q, M))
    LD = np.zeros((Q, M, 2))
    PV = np.zeros((Q, 3 * npc))
    for q, pt in enumerate(points):
        c = ref.locate(pt)
        idx = ref.cell_nodes[c]
        b = ref.cell_bases[c]
        L[q, idx] = b(pt)[0]
        LD[q, idx, 0] = b(pt, 1, 0)[0]
        LD[q, idx, 1] = b(pt, 0, 1)[0]
        PV[q, c * npc:(c + 1) * npc] = ref.pressure_bases[c](pt)[0]
    W = np.zeros(Q) if weights is None else np.asarray(weights, dtype=float)
    return _with_geometry(ref, geo_degree, points, L, LD, PV, W)


def _with_geometry(ref, geo_degree, points, L, LD, PV, W):
    gb = plain_triangle(geo_degree).basis
    GV = gb(points)
    GD = np.stack([gb(points, 1, 0), gb(points, 0, 1)], axis=-1)
    GH = np.stack([gb(points, 2, 0), gb(points, 1, 1), gb(points, 0, 2)], axis=-1)
    GDN = np.stack([gb(ref.nodes, 1, 0), gb(ref.nodes, 0, 1)], axis=-1)
    return KernelTables(GV, GD, GH, GDN, np.ascontiguousarray(L), np.ascontiguousarray(LD),
                        np.ascontiguousarray(PV), np.ascontiguousarray(W))


@dataclass(eq=False)
class VelocitySpace:
    mesh: CurvedMesh
    degree: int
    mode: str
    reference: ReferenceMacroElement
    node_coords: np.ndarray  # (N, 2) physical nodes F_T(a_j)
    element_nodes: np.ndarray  # (E, M) global scalar node of local node j
    node_boundary: np.ndarray  # (N,) constrained nodes
    free_index: np.ndarray  # (2N,) free DOF number or -1
    _tables: dict = field(default_factory=dict, repr=False)

    @property
    def piola(self):
        return self.mode == "piola"

    @property
    def edge_placement(self):
        return self.reference.edge_placement

    @property
    def num_nodes(self):
        return len(self.node_coords)

    @property
    def num_dofs(self):
        return 2 * self.num_nodes

    @property
    def num_free(self):
        return int(np.count_nonzero(self.free_index >= 0))

    @property
    def free_dofs(self):
        return np.nonzero(self.free_index >= 0)[0]

    def element_dofs(self):
        """(E, 2M) global DOF of local DOF 2j + c."""
        n = self.element_nodes
        return np.stack([2 * n, 2 * n + 1], axis=-1).reshape(len(n), -1)

    def tables(self, order) -> KernelTables:
        if order not in self._tables:
            t = self.reference.table(order)
            self._tables[order] = _with_geometry(self.reference, self.mesh.degree, t.points,
                                                 t.values, t.grads, t.pvalues, t.weights)
        return self._tables[order]

    def local(self, coeffs):
        """Global coefficient vector (2N,) -> element-local nodal values (E, M, 2)."""
        c = np.asarray(coeffs, dtype=float).reshape(-1, 2)
        return c[self.element_nodes]

    def expand(self, free_values):
        """Free-DOF vector -> full coefficient vector with zeros on the boundary."""
        out = np.zeros(self.num_dofs)
        out[self.free_dofs] = free_values
        return out

    def as_mode(self, mode):
        return VelocitySpace(self.mesh, self.degree, mode, self.reference, self.node_coords,
                             self.element_nodes, self.node_boundary, self.free_index)


@dataclass(eq=False)
class PressureSpace:
    mesh: CurvedMesh
    degree: int
    per_cell: int

    @property
    def per_element(self):
        return 3 * self.per_cell

    @property
    def num_dofs(self):
        return self.mesh.num_elements * self.per_element

    def element_dofs(self):
        E, P = self.mesh.num_elements, self.per_element
        return np.arange(E * P).reshape(E, P)

    def constant(self, value=1.0):
        """Coefficients of the constant function (nodal basis sums to one)."""
        return np.full(self.num_dofs, float(value))


def build_spaces(mesh: CurvedMesh, k: int, mode: str = "piola", edge_placement: str = "gauss-lobatto"):
    if mode not in VELOCITY_MODES:
        raise ConstructionError(f"unknown velocity mode {mode!r}")
    if mesh.degree != k:
        raise ConstructionError(f"mesh geometry degree {mesh.degree} differs from space degree {k}")
    ref = build_reference_element(k, edge_placement)
    aff = mesh.affine
    E, M = aff.num_triangles, ref.num_nodes
    nv, ne = aff.num_vertices, len(aff.edges)
    n_int = M - 3 - 3 * (k - 1)

    elem_nodes = np.empty((E, M), dtype=np.int64)
    int_count = 0
    for j, tag in enumerate(ref.tags):
        if tag[0] == "vertex" and tag[1] < 3:
            elem_nodes[:, j] = aff.triangles[:, tag[1]]
        elif tag[0] == "edge" and tag[1] < 3:
            i, pos = tag[1], tag[2]
            fwd = aff.edge_forward[:, i]
            elem_nodes[:, j] = nv + (k - 1) * aff.tri_edges[:, i] + np.where(fwd, pos, k - 2 - pos)
        else:
            elem_nodes[:, j] = nv + (k - 1) * ne + np.arange(E) * n_int + int_count
            int_count += 1
    N = nv + (k - 1) * ne + E * n_int

    gb = plain_triangle(k).basis(ref.nodes)
    local_x = np.einsum("jg,egi->eji", gb, mesh.coefficients)
    coords = np.full((N, 2), np.nan)
    coords[elem_nodes.ravel()] = local_x.reshape(-1, 2)
    mismatch = np.max(np.abs(coords[elem_nodes] - local_x))
    if not np.isfinite(mismatch) or mismatch > 1e-12 * max(1.0, np.abs(local_x).max()):
        raise ConstructionError(f"shared nodes disagree between elements (mismatch {mismatch:.3e})")

    bnode = np.zeros(N, dtype=bool)
    bnode[:nv] = aff.vertex_boundary_flags
    bedges = np.nonzero(aff.boundary_edges)[0]
    for pos in range(k - 1):
        bnode[nv + (k - 1) * bedges + pos] = True
    bdof = np.repeat(bnode, 2)
    free_index = -np.ones(2 * N, dtype=np.int64)
    free_index[~bdof] = np.arange(int(np.count_nonzero(~bdof)))

    V = VelocitySpace(mesh, k, mode, ref, coords, elem_nodes, bnode, free_index)
    Q = PressureSpace(mesh, k - 1, ref.pressure_dim_per_cell)
    return V, Q


def shape_eval(space: VelocitySpace, element: int, xhat):
    """Local shapes at ``xhat`` of element ``element``.

    Returns values (2M, 2), physical gradients (2M, 2, 2) with [a, i, l] =
    d v_i / d x_l, divergence from the Piola identity and divergence as the
    gradient trace (both (2M,)).
    """
    T = point_tables(space.reference, space.mesh.degree, [xhat])
    M = space.reference.num_nodes
    X = space.mesh.coefficients[element][None]
    vals = np.empty((2 * M, 2))
    grads = np.empty((2 * M, 2, 2))
    div = np.empty(2 * M)
    divtr = np.empty(2 * M)
    for a in range(2 * M):
        U = np.zeros((1, M, 2))
        U[0, a // 2, a % 2] = 1.0
        _, u, gu, dv, dt, _ = field_values(X, T, U, space.piola)
        vals[a], grads[a], div[a], divtr[a] = u[0, 0], gu[0, 0], dv[0, 0], dt[0, 0]
    return vals, grads, div, divtr


def _edge_reference_points(i, forward, t):
    """Reference points on local edge i at global parameters t (low -> high vertex)."""
    from .reference import VERTICES
    a, b = EDGES[i]
    s = t if forward else 1.0 - t
    return (1 - s)[:, None] * VERTICES[a] + s[:, None] * VERTICES[b]


def edge_traces(space: VelocitySpace, coeffs, n_gauss=None, edges=None):
    """Traces of a velocity field on both sides of interior edges.

    Returns (edge ids, gauss weights on [0, 1], side-1 values, side-2 values,
    unit normals, unit tangents, edge lengths); values have shape (ne, ng, 2).
    """
    aff = space.mesh.affine
    k = space.degree
    ng = n_gauss or k + 2
    gt, gw = np.polynomial.legendre.leggauss(ng)
    t, w = 0.5 * (gt + 1.0), 0.5 * gw
    inner = np.nonzero(~aff.boundary_edges)[0] if edges is None else np.asarray(edges)
    et = aff.edge_triangles[inner]
    U = space.local(coeffs)
    vals = np.zeros((2, len(inner), ng, 2))
    for side in range(2):
        elems = et[:, side]
        loc = np.argmax(aff.tri_edges[elems] == inner[:, None], axis=1)
        fwd = aff.edge_forward[elems, loc]
        for i in range(3):
            for f in (True, False):
                sel = np.nonzero((loc == i) & (fwd == f))[0]
                if not len(sel):
                    continue
                T = point_tables(space.reference, space.mesh.degree, _edge_reference_points(i, f, t))
                el = elems[sel]
                _, u, _, _, _, _ = field_values(space.mesh.coefficients[el], T, U[el], space.piola)
                vals[side, sel] = u
    P = aff.vertices[aff.edges[inner, 0]]
    Qv = aff.vertices[aff.edges[inner, 1]]
    d = Qv - P
    length = np.linalg.norm(d, axis=1)
    tang = d / length[:, None]
    normal = np.stack([tang[:, 1], -tang[:, 0]], axis=1)
    return inner, w, vals[0], vals[1], normal, tang, length


def normal_trace_check(space: VelocitySpace, edge: int, tangential: bool = False) -> float:
    """Max |[v . n]| (or |[v . t]|) over edge Gauss points and the edge's basis functions."""
    aff = space.mesh.affine
    if aff.boundary_edges[edge]:
        raise ValueError("normal_trace_check needs an interior edge")
    e1, e2 = aff.edge_triangles[edge]
    dofs = np.intersect1d(space.element_dofs()[e1], space.element_dofs()[e2])
    worst = 0.0
    for g in dofs:
        c = np.zeros(space.num_dofs)
        c[g] = 1.0
        _, _, v1, v2, n, tg, _ = edge_traces(space, c, edges=[edge])
        dirv = tg if tangential else n
        jump = np.einsum("qi,i->q", v1[0] - v2[0], dirv[0])
        worst = max(worst, float(np.max(np.abs(jump))))
    return worst


def interpolate(space: VelocitySpace, u) -> np.ndarray:
    """Nodal interpolant: coefficients are u at the physical nodes."""
    return np.asarray(u(space.node_coords), dtype=float).reshape(-1)


def conforming_relative(space: VelocitySpace, coeffs):
    """Standard isoparametric field with the same nodal values (H^1_0-conforming).

    Returns the companion space and the coefficients; on affine elements the
    two fields coincide.
    """
    if not space.piola:
        raise ValueError("conforming relative is defined for the Piola space")
    return space.as_mode("standard-isoparametric"), np.array(coeffs, dtype=float, copy=True)
