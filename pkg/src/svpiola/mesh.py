"""Affine ellipse triangulations and per-element polynomial geometry maps."""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import Delaunay

from .errors import GeometryError
from .geometry import SmoothDomain, levelset, project_to_boundary
from .reference import EDGES, build_reference_element, plain_triangle

__all__ = [
    "AffineMesh",
    "GeometryMap",
    "CurvedMesh",
    "generate_ellipse_mesh",
    "refine",
    "build_geometry_maps",
    "geometry_eval",
    "geometry_derivatives",
    "write_mesh",
    "read_mesh",
    "boundary_distance",
]

# Coarse mesh on the ellipse with semi-axes (1.5, 1): 16 boundary points equally
# spaced in arclength, a ring of 8 points at 0.65 of the semi-axes and two points
# on the major axis. The longest edges are interior, so refinement halves h.
# Other ellipses reuse it scaled per axis (an affine image, so orientation and
# connectivity carry over).
_COARSE_BOUNDARY = 16
_COARSE_RING = 8
_COARSE_RING_SCALE = 0.65
_COARSE_AXIS = 0.3


def _cross(u, v):
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


@dataclass(eq=False)
class AffineMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    vertex_boundary_flags: np.ndarray
    domain: SmoothDomain = field(default_factory=SmoothDomain)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.vertex_boundary_flags = np.asarray(self.vertex_boundary_flags, dtype=bool)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @cached_property
    def _topology(self):
        tri = self.triangles
        # local edge i is opposite local vertex i, oriented as EDGES[i]
        loc = np.stack([tri[:, [a, b]] for a, b in EDGES], axis=1)  # (nt, 3, 2)
        key = np.sort(loc, axis=2).reshape(-1, 2)
        edges, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        tri_edges = inv.reshape(-1, 3)
        counts = np.bincount(inv, minlength=len(edges))
        if counts.max() > 2:
            raise GeometryError("non-manifold edge: shared by more than two triangles")
        edge_tris = -np.ones((len(edges), 2), dtype=np.int64)
        owner = np.repeat(np.arange(len(tri)), 3)
        order = np.argsort(inv, kind="stable")
        first = np.ones(len(inv), dtype=bool)
        first[1:] = inv[order][1:] != inv[order][:-1]
        edge_tris[inv[order][first], 0] = owner[order][first]
        second = ~first
        edge_tris[inv[order][second], 1] = owner[order][second]
        # True where the local orientation runs from the lower to the higher index
        forward = loc[:, :, 0] < loc[:, :, 1]
        return edges, tri_edges, edge_tris, forward

    @property
    def edges(self):
        return self._topology[0]

    @property
    def tri_edges(self):
        return self._topology[1]

    @property
    def edge_triangles(self):
        return self._topology[2]

    @property
    def edge_forward(self):
        return self._topology[3]

    @property
    def boundary_edges(self):
        return self.edge_triangles[:, 1] < 0

    @property
    def h(self):
        e = self.edges
        return float(np.max(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    def signed_areas(self):
        P = self.vertices[self.triangles]
        return 0.5 * _cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])

    def check(self):
        """Raise GeometryError if any structural invariant fails."""
        bflag = self.vertex_boundary_flags
        phi = levelset(self.domain, self.vertices[bflag])
        if phi.size and np.max(np.abs(phi)) > 1e-12:
            raise GeometryError("boundary vertex off the ellipse")
        if np.any(self.signed_areas() <= 0):
            bad = int(np.argmax(self.signed_areas() <= 0))
            raise GeometryError("triangle with nonpositive signed area", element=bad)
        nb = bflag[self.triangles].sum(axis=1)
        if np.any(nb > 2):
            raise GeometryError("triangle with three boundary vertices", element=int(np.argmax(nb > 2)))
        ev = self.edges[self.boundary_edges]
        if not np.all(bflag[ev]):
            raise GeometryError("boundary edge with an interior endpoint")
        deg = np.bincount(ev.ravel(), minlength=self.num_vertices)
        if np.any(deg[bflag] != 2) or np.any(deg[~bflag] != 0):
            raise GeometryError("boundary is not a single closed polygon")
        return self


def _arclength_boundary(domain, n):
    a, b = domain.semi_axis_a, domain.semi_axis_b
    t = np.linspace(0.0, 2 * np.pi, 20001)
    xy = np.stack([a * np.cos(t), b * np.sin(t)], axis=1)
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy, axis=0), axis=1))])
    tt = np.interp(np.arange(n) / n * s[-1], s, t)
    return np.stack([a * np.cos(tt), b * np.sin(tt)], axis=1)


def _orient(vertices, triangles):
    P = vertices[triangles]
    neg = _cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]) < 0
    triangles = triangles.copy()
    triangles[neg] = triangles[neg][:, [0, 2, 1]]
    return triangles


def _split_three_boundary(vertices, triangles, bflag):
    """Insert the centroid of every triangle whose vertices all lie on the boundary."""
    bad = bflag[triangles].all(axis=1)
    if not bad.any():
        return vertices, triangles, bflag
    keep = [triangles[~bad]]
    verts = [vertices]
    nv = len(vertices)
    for t in triangles[bad]:
        c = nv
        verts.append(vertices[t].mean(axis=0)[None])
        nv += 1
        keep.append(np.array([[t[0], t[1], c], [t[1], t[2], c], [t[2], t[0], c]]))
    bflag = np.concatenate([bflag, np.zeros(int(bad.sum()), dtype=bool)])
    return np.concatenate(verts), np.concatenate(keep), bflag


def coarse_mesh(domain: SmoothDomain = SmoothDomain()) -> AffineMesh:
    ref = SmoothDomain()
    B = _arclength_boundary(ref, _COARSE_BOUNDARY)
    ang = 2 * np.pi * np.arange(_COARSE_RING) / _COARSE_RING
    ring = _COARSE_RING_SCALE * np.stack([1.5 * np.cos(ang), np.sin(ang)], axis=1)
    axis = np.array([[-_COARSE_AXIS, 0.0], [_COARSE_AXIS, 0.0]])
    X = np.concatenate([B, ring, axis])
    bflag = np.arange(len(X)) < len(B)
    tri = _orient(X, Delaunay(X).simplices.astype(np.int64))
    X, tri, bflag = _split_three_boundary(X, tri, bflag)
    X = X * np.array([domain.semi_axis_a / 1.5, domain.semi_axis_b])
    # put boundary vertices exactly on the (possibly rescaled) ellipse
    X[bflag] /= np.sqrt(1.0 + levelset(domain, X[bflag]))[:, None]
    return AffineMesh(X, tri, bflag, domain)


def refine(mesh: AffineMesh) -> AffineMesh:
    """Uniform red refinement; new boundary midpoints are projected onto the ellipse."""
    V, T = mesh.vertices, mesh.triangles
    edges, tri_edges = mesh.edges, mesh.tri_edges
    nv = len(V)
    mid = 0.5 * (V[edges[:, 0]] + V[edges[:, 1]])
    bnd = mesh.boundary_edges
    if bnd.any():
        mid[bnd] = project_to_boundary(mesh.domain, mid[bnd])
    verts = np.concatenate([V, mid])
    bflag = np.concatenate([mesh.vertex_boundary_flags, bnd])
    m = nv + tri_edges  # m[:, i] is the midpoint of local edge i
    v0, v1, v2 = T[:, 0], T[:, 1], T[:, 2]
    m0, m1, m2 = m[:, 0], m[:, 1], m[:, 2]
    children = np.stack([
        np.stack([v0, m2, m1], axis=1),
        np.stack([m2, v1, m0], axis=1),
        np.stack([m1, m0, v2], axis=1),
        np.stack([m0, m1, m2], axis=1),
    ], axis=1).reshape(-1, 3)
    verts, children, bflag = _split_three_boundary(verts, children, bflag)
    return AffineMesh(verts, children, bflag, mesh.domain)


def generate_ellipse_mesh(domain: SmoothDomain = SmoothDomain(), level: int = 0) -> AffineMesh:
    if not 0 <= level <= 6:
        raise ValueError(f"mesh level must be in [0, 6], got {level}")
    mesh = coarse_mesh(domain).check()
    for _ in range(level):
        mesh = refine(mesh).check()
    return mesh


@dataclass(frozen=True)
class GeometryMap:
    """F_T as nodal coefficients on the plain degree-k triangle."""

    element: int
    degree: int
    coefficients: np.ndarray  # (n_geo, 2)
    curved: bool

    @property
    def kind(self):
        return "curved" if self.curved else "affine"

    def jacobian(self, xhat):
        basis = plain_triangle(self.degree).basis
        pt = np.atleast_2d(np.asarray(xhat, dtype=float))
        dx, dy = basis(pt, 1, 0)[0], basis(pt, 0, 1)[0]
        return np.stack([dx @ self.coefficients, dy @ self.coefficients], axis=1)


def geometry_eval(gmap: GeometryMap, xhat):
    """Return (x, J, detJ, A) at reference point ``xhat``; A = J / detJ."""
    basis = plain_triangle(gmap.degree).basis
    pt = np.atleast_2d(np.asarray(xhat, dtype=float))
    X = gmap.coefficients
    x = basis(pt)[0] @ X
    J = np.stack([basis(pt, 1, 0)[0] @ X, basis(pt, 0, 1)[0] @ X], axis=1)
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if not det > 0:
        raise GeometryError(f"det(DF_T) = {det:.3e} <= 0", element=gmap.element)
    return x, J, det, J / det


def geometry_derivatives(gmap: GeometryMap, xhat):
    """dA[i, j, n] = d A_ij / d xhat_n, by the quotient rule on J / det J."""
    basis = plain_triangle(gmap.degree).basis
    pt = np.atleast_2d(np.asarray(xhat, dtype=float))
    X = gmap.coefficients
    J = np.stack([basis(pt, 1, 0)[0] @ X, basis(pt, 0, 1)[0] @ X], axis=1)
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if not det > 0:
        raise GeometryError(f"det(DF_T) = {det:.3e} <= 0", element=gmap.element)
    H = np.empty((2, 2, 2))  # H[:, m, n] = d^2 F / dxhat_m dxhat_n
    H[:, 0, 0] = basis(pt, 2, 0)[0] @ X
    H[:, 0, 1] = H[:, 1, 0] = basis(pt, 1, 1)[0] @ X
    H[:, 1, 1] = basis(pt, 0, 2)[0] @ X
    adj = np.array([[J[1, 1], -J[0, 1]], [-J[1, 0], J[0, 0]]])
    dA = np.empty((2, 2, 2))
    for n in range(2):
        dJ = H[:, :, n]
        ddet = np.trace(adj @ dJ)
        dA[:, :, n] = dJ / det - J * ddet / det**2
    return dA


@dataclass(eq=False)
class CurvedMesh:
    affine: AffineMesh
    degree: int
    mode: str
    coefficients: np.ndarray  # (nt, n_geo, 2)
    curved: np.ndarray  # (nt,) bool
    curved_edge: np.ndarray  # (nt,) local index of the curved edge or -1
    interior_nodes: str = "affine"
    det_range: tuple = (np.nan, np.nan)

    @property
    def domain(self):
        return self.affine.domain

    @property
    def num_elements(self):
        return self.affine.num_triangles

    @property
    def h(self):
        return self.affine.h

    @property
    def edge_curved(self):
        return self.affine.boundary_edges & (self.mode == "curved")

    def map(self, e) -> GeometryMap:
        return GeometryMap(int(e), self.degree, self.coefficients[e], bool(self.curved[e]))

    def edge_info(self):
        """Per edge: (element pair, straight/curved flag, endpoint vertices)."""
        aff = self.affine
        return [
            {"elements": tuple(int(t) for t in aff.edge_triangles[i] if t >= 0),
             "boundary": bool(aff.boundary_edges[i]),
             "curved": bool(self.edge_curved[i]),
             "vertices": tuple(int(v) for v in aff.edges[i])}
            for i in range(len(aff.edges))
        ]

    def jacobians(self, points):
        """J (nt, np, 2, 2) and det (nt, np) at reference points."""
        basis = plain_triangle(self.degree).basis
        dx, dy = basis(points, 1, 0), basis(points, 0, 1)
        J = np.stack([
            np.einsum("qg,egi->eqi", dx, self.coefficients),
            np.einsum("qg,egi->eqi", dy, self.coefficients),
        ], axis=-1)
        det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        return J, det

    def physical_points(self, points):
        basis = plain_triangle(self.degree).basis
        return np.einsum("qg,egi->eqi", basis(points), self.coefficients)


def _affine_coefficients(affine, k):
    geo = plain_triangle(k)
    P = affine.vertices[affine.triangles]  # (nt, 3, 2)
    return np.einsum("gv,evi->egi", geo.barycentric, P)


def build_geometry_maps(affine: AffineMesh, k: int, mode: str = "curved",
                        interior_nodes: str = "blend") -> CurvedMesh:
    """Degree-k maps F_T; boundary-edge geometry nodes are projected onto the ellipse.

    ``interior_nodes`` selects where the interior geometry nodes of a curved
    element go: "affine" keeps them at their straight positions, "blend" moves
    them by (1 - lambda_c)^2 times the boundary displacement at the matching
    edge parameter, which keeps all derivatives of F_T bounded by the edge
    curvature.
    """
    if mode not in ("curved", "force-affine"):
        raise ValueError(f"unknown geometry mode {mode!r}")
    if interior_nodes not in ("affine", "blend"):
        raise ValueError(f"unknown interior node policy {interior_nodes!r}")
    geo = plain_triangle(k)
    coef = _affine_coefficients(affine, k)
    nt = affine.num_triangles
    curved = np.zeros(nt, dtype=bool)
    curved_edge = -np.ones(nt, dtype=np.int64)
    if mode == "curved" and k > 1:
        bnd = affine.boundary_edges[affine.tri_edges]  # (nt, 3)
        elems, loc = np.nonzero(bnd)
        curved[elems] = True
        curved_edge[elems] = loc
        interior = geo.interior_nodes()
        for i in range(3):
            sel = elems[loc == i]
            if not len(sel):
                continue
            a, b = EDGES[i]
            nodes = list(geo.edge_nodes[i][1:-1])
            chord = coef[sel][:, nodes]  # affine positions
            proj = project_to_boundary(affine.domain, chord.reshape(-1, 2)).reshape(chord.shape)
            coef[np.ix_(sel, nodes)] = proj
            if interior_nodes == "blend" and len(interior):
                lam = geo.barycentric[interior]
                s = lam[:, b] / (lam[:, a] + lam[:, b])
                weight = (lam[:, a] + lam[:, b]) ** 2
                Va, Vb = affine.vertices[affine.triangles[sel, a]], affine.vertices[affine.triangles[sel, b]]
                pts = (1 - s)[None, :, None] * Va[:, None] + s[None, :, None] * Vb[:, None]
                disp = project_to_boundary(affine.domain, pts.reshape(-1, 2)).reshape(pts.shape) - pts
                coef[np.ix_(sel, interior)] += weight[None, :, None] * disp
    mesh = CurvedMesh(affine, k, mode, coef, curved, curved_edge, interior_nodes)
    _check_jacobians(mesh)
    return mesh


def _check_jacobians(mesh: CurvedMesh):
    k = mesh.degree
    ref = build_reference_element(max(k, 2))
    pts = ref.table(2 * max(k, 2) + 2).points
    _, det = mesh.jacobians(pts)
    if np.any(det <= 0):
        e = int(np.argwhere(det <= 0)[0, 0])
        raise GeometryError(f"det(DF_T) <= 0 in element {e}", element=e)
    det_aff = 2.0 * mesh.affine.signed_areas()
    ratio = det / det_aff[:, None]
    mesh.det_range = (float(ratio.min()), float(ratio.max()))


def boundary_distance(mesh: CurvedMesh, samples: int = 20) -> float:
    """Largest sampled distance from the discrete boundary to the ellipse."""
    geo = plain_triangle(mesh.degree)
    aff = mesh.affine
    bnd = aff.boundary_edges[aff.tri_edges]
    elems, loc = np.nonzero(bnd)
    t = (np.arange(samples) + 0.5) / samples
    worst = 0.0
    for i in range(3):
        sel = elems[loc == i]
        if not len(sel):
            continue
        a, b = EDGES[i]
        ref = (1 - t)[:, None] * geo.nodes[a] + t[:, None] * geo.nodes[b]
        vals = geo.basis(ref)
        x = np.einsum("qg,egi->eqi", vals, mesh.coefficients[sel]).reshape(-1, 2)
        y = project_to_boundary(aff.domain, x)
        worst = max(worst, float(np.max(np.linalg.norm(x - y, axis=1))))
    return worst


def write_mesh(path, mesh):
    """Text format: vertices, triangles, then geometry blocks of curved elements."""
    curved = mesh if isinstance(mesh, CurvedMesh) else None
    aff = curved.affine if curved is not None else mesh
    lines = [f"vertices {aff.num_vertices}"]
    for (x, y), f in zip(aff.vertices, aff.vertex_boundary_flags):
        lines.append(f"{x:.17g} {y:.17g} {int(f)}")
    lines.append(f"triangles {aff.num_triangles}")
    lines.extend(f"{i} {j} {k}" for i, j, k in aff.triangles)
    if curved is not None:
        idx = np.nonzero(curved.curved)[0]
        lines.append(f"geometry {curved.degree} {len(idx)} {curved.mode} {curved.interior_nodes}")
        for e in idx:
            lines.append(f"element {e} {curved.curved_edge[e]}")
            lines.extend(f"{x:.17g} {y:.17g}" for x, y in curved.coefficients[e])
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path, domain: SmoothDomain = SmoothDomain()):
    with open(path) as fh:
        tokens = [ln.split() for ln in fh if ln.strip()]
    pos = 0

    def header(name):
        nonlocal pos
        if tokens[pos][0] != name:
            raise GeometryError(f"mesh file: expected '{name}', found '{tokens[pos][0]}'")
        pos += 1
        return tokens[pos - 1][1:]

    nv = int(header("vertices")[0])
    rows = tokens[pos:pos + nv]
    pos += nv
    V = np.array([[float(r[0]), float(r[1])] for r in rows]).reshape(-1, 2)
    bflag = np.array([int(r[2]) for r in rows], dtype=bool)
    nt = int(header("triangles")[0])
    T = np.array([[int(c) for c in r] for r in tokens[pos:pos + nt]], dtype=np.int64).reshape(-1, 3)
    pos += nt
    aff = AffineMesh(V, T, bflag, domain)
    if pos >= len(tokens):
        return aff
    k, nc, mode, interior = header("geometry")
    k, nc = int(k), int(nc)
    coef = _affine_coefficients(aff, k)
    curved = np.zeros(nt, dtype=bool)
    curved_edge = -np.ones(nt, dtype=np.int64)
    ng = plain_triangle(k).num_nodes
    for _ in range(nc):
        e, le = (int(c) for c in header("element"))
        coef[e] = np.array([[float(r[0]), float(r[1])] for r in tokens[pos:pos + ng]])
        pos += ng
        curved[e] = True
        curved_edge[e] = le
    mesh = CurvedMesh(aff, k, mode, coef, curved, curved_edge, interior)
    _check_jacobians(mesh)
    return mesh
