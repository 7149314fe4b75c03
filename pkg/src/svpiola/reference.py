"""Clough-Tocher reference macro-element, 1D node rules and triangle quadrature.

Reference triangle vertices are v0 = (1, 0), v1 = (0, 1), v2 = (0, 0); the
barycentric coordinates of a point (x, y) are therefore (x, y, 1 - x - y).
Edges are numbered opposite their vertex: e0 = (v1, v2), e1 = (v2, v0),
e2 = (v0, v1). The split joins every vertex to the barycenter s; cell i is
(v[i+1], v[i+2], s) and contains boundary edge e_i. Interior split edges are
numbered 3 + i for (v_i, s).
"""
from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, factorial

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .errors import ConstructionError, DomainError

__all__ = [
    "GaussLobattoRule",
    "gauss_lobatto_rule",
    "equidistant_rule",
    "TriangleQuadrature",
    "triangle_quadrature",
    "LagrangeBasis",
    "ReferenceMacroElement",
    "build_reference_element",
    "eval_scalar_basis",
    "PlainTriangle",
    "plain_triangle",
    "MacroTable",
    "VERTICES",
    "BARYCENTER",
    "EDGES",
]

VERTICES = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
BARYCENTER = np.array([1.0 / 3.0, 1.0 / 3.0])
EDGES = ((1, 2), (2, 0), (0, 1))
PLACEMENTS = ("gauss-lobatto", "equidistant")


@dataclass(frozen=True)
class GaussLobattoRule:
    """(k+1)-point Gauss-Lobatto rule on [0, 1]; exact for degree <= 2k - 1."""

    degree: int
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def interior(self):
        return self.nodes[1:-1]


def _legendre_and_derivative(n, x):
    p0, p1 = np.ones_like(x), x.copy()
    if n == 0:
        return p0, np.zeros_like(x)
    for j in range(1, n):
        p0, p1 = p1, ((2 * j + 1) * x * p1 - j * p0) / (j + 1)
    # derivative from the standard recurrence, valid off the endpoints
    dp = n * (x * p1 - p0) / (x * x - 1.0)
    return p1, dp


@lru_cache(maxsize=None)
def gauss_lobatto_rule(k: int) -> GaussLobattoRule:
    """Endpoints plus roots of P_k' mapped to [0, 1].

    Interior roots are found by Newton iteration on P_k'(x) starting from the
    Chebyshev-Gauss-Lobatto points.
    """
    if not 1 <= k <= 12:
        raise ConstructionError(f"Gauss-Lobatto degree must be in [1, 12], got {k}")
    if k == 1:
        return GaussLobattoRule(1, np.array([0.0, 1.0]), np.array([0.5, 0.5]))

    x = -np.cos(np.pi * np.arange(1, k) / k)
    for _ in range(100):
        # P_k'' from the Legendre ODE: (1 - x^2) P'' = 2x P' - k(k+1) P
        p, dp = _legendre_and_derivative(k, x)
        d2p = (2 * x * dp - k * (k + 1) * p) / (1 - x * x)
        step = dp / d2p
        x = x - step
        if np.max(np.abs(step)) < 1e-16:
            break
    else:
        raise ConstructionError(f"Gauss-Lobatto root finding did not converge for k={k}")
    x = np.sort(x)
    x = 0.5 * (x - x[::-1])  # exact symmetry
    nodes = np.concatenate([[-1.0], x, [1.0]])
    p, _ = _legendre_and_derivative(k, nodes[1:-1])
    w = np.empty(k + 1)
    w[0] = w[-1] = 2.0 / (k * (k + 1))
    w[1:-1] = 2.0 / (k * (k + 1) * p * p)
    nodes01 = 0.5 * (nodes + 1.0)
    nodes01[0], nodes01[-1] = 0.0, 1.0
    return GaussLobattoRule(k, nodes01, 0.5 * w)


def equidistant_rule(k: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, k + 1)


def edge_parameters(k: int, placement: str) -> np.ndarray:
    """Interior parameters t in (0, 1) of the k - 1 nodes on an edge."""
    if placement == "gauss-lobatto":
        return gauss_lobatto_rule(k).interior
    if placement == "equidistant":
        return equidistant_rule(k)[1:-1]
    raise ConstructionError(f"unknown edge placement {placement!r}")


@dataclass(frozen=True)
class TriangleQuadrature:
    """Rule on the reference triangle; ``points`` are Cartesian (x, y)."""

    order: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def barycentric(self):
        x, y = self.points[:, 0], self.points[:, 1]
        return np.stack([x, y, 1.0 - x - y], axis=1)

    def mapped(self, corners):
        """Points and weights on the triangle with the given 3 corners."""
        corners = np.asarray(corners, dtype=float)
        pts = self.barycentric @ corners
        d1, d2 = corners[1] - corners[0], corners[2] - corners[0]
        area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
        return pts, self.weights * (area / 0.5)


@lru_cache(maxsize=None)
def triangle_quadrature(order: int) -> TriangleQuadrature:
    """Collapsed Gauss-Jacobi product rule exact to total degree ``order``."""
    if not 0 <= order <= 20:
        raise ConstructionError(f"triangle quadrature order must be in [0, 20], got {order}")
    if order <= 1:
        return TriangleQuadrature(order, np.array([[1 / 3, 1 / 3]]), np.array([0.5]))
    n = (order + 2) // 2
    gu, wu = roots_legendre(n)
    gu, wu = 0.5 * (gu + 1.0), 0.5 * wu
    # weight (1 - v) on [0, 1]
    gv, wv = roots_jacobi(n, 1.0, 0.0)
    gv, wv = 0.5 * (gv + 1.0), 0.25 * wv
    U, V = np.meshgrid(gu, gv, indexing="ij")
    W = np.outer(wu, wv)
    pts = np.stack([(U * (1.0 - V)).ravel(), V.ravel()], axis=1)
    return TriangleQuadrature(order, pts, W.ravel())


def monomial_exponents(degree):
    return [(total - q, q) for total in range(degree + 1) for q in range(total + 1)]


def _monomials(pts, exps, center, dx=0, dy=0, scale=1.0):
    px = (pts[:, 0] - center[0]) / scale
    py = (pts[:, 1] - center[1]) / scale
    out = np.zeros((len(pts), len(exps)))
    for m, (p, q) in enumerate(exps):
        if p < dx or q < dy:
            continue
        c = (factorial(p) // factorial(p - dx)) * (factorial(q) // factorial(q - dy))
        out[:, m] = c * px ** (p - dx) * py ** (q - dy)
    return out / scale ** (dx + dy)


class LagrangeBasis:
    """Nodal basis of P_degree dual to ``nodes`` (monomials about ``center``)."""

    def __init__(self, nodes, degree, center=None):
        self.nodes = np.asarray(nodes, dtype=float)
        self.degree = degree
        self.exps = monomial_exponents(degree)
        if len(self.exps) != len(self.nodes):
            raise ConstructionError(
                f"{len(self.nodes)} nodes cannot be unisolvent for P{degree} "
                f"(dimension {len(self.exps)})"
            )
        self.center = self.nodes.mean(axis=0) if center is None else np.asarray(center)
        self.scale = float(np.max(np.linalg.norm(self.nodes - self.center, axis=1)))
        vander = _monomials(self.nodes, self.exps, self.center, scale=self.scale)
        self.condition = float(np.linalg.cond(vander))
        if not np.isfinite(self.condition) or self.condition > 1e12:
            raise ConstructionError("node set is not unisolvent")
        self.coef = np.linalg.inv(vander)

    def __call__(self, pts, dx=0, dy=0):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return _monomials(pts, self.exps, self.center, dx, dy, self.scale) @ self.coef


def _lattice_interior(degree):
    """Barycentric triples (i, j, l)/degree with all entries >= 1."""
    out = []
    for i in range(1, degree):
        for j in range(1, degree - i):
            l = degree - i - j
            if l >= 1:
                out.append((i / degree, j / degree, l / degree))
    return np.array(out).reshape(-1, 3)


def _lattice_all(degree):
    out = []
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            out.append((i / degree, j / degree, (degree - i - j) / degree))
    return np.array(out)


@dataclass(frozen=True)
class MacroTable:
    """Reference basis tabulated at a macro-element quadrature rule.

    ``values[q, j]`` and ``grads[q, j, :]`` hold scalar basis function j at
    point q (zero outside its cells); ``pvalues[q, r]`` the pressure basis.
    """

    order: int
    points: np.ndarray
    weights: np.ndarray
    cell: np.ndarray
    values: np.ndarray
    grads: np.ndarray
    pvalues: np.ndarray


@dataclass(eq=False)
class ReferenceMacroElement:
    degree: int
    edge_placement: str
    nodes: np.ndarray
    tags: list
    cells: np.ndarray
    cell_nodes: np.ndarray
    cell_bases: list
    pressure_bases: list
    pressure_nodes: np.ndarray
    _tables: dict = field(default_factory=dict, repr=False)

    @property
    def num_nodes(self):
        return len(self.nodes)

    @property
    def pressure_dim_per_cell(self):
        return comb(self.degree + 1, 2)

    @property
    def num_pressure(self):
        return 3 * self.pressure_dim_per_cell

    @property
    def shared_mask(self):
        """True for nodes on the boundary of the reference triangle."""
        return np.array([
            (t[0] == "vertex" and t[1] < 3) or (t[0] == "edge" and t[1] < 3)
            for t in self.tags
        ])

    @property
    def vandermonde_condition(self):
        return max(b.condition for b in self.cell_bases)

    def edge_node_indices(self, edge):
        """Macro node indices on the closure of boundary edge ``edge``, ordered
        from its first to its second vertex."""
        a, b = EDGES[edge]
        inner = [j for j, t in enumerate(self.tags) if t[0] == "edge" and t[1] == edge]
        return [a] + inner + [b]

    def locate(self, xhat, tol=1e-12):
        """Index of a split cell containing ``xhat``; DomainError if outside."""
        xhat = np.asarray(xhat, dtype=float)
        lam = np.array([xhat[0], xhat[1], 1.0 - xhat[0] - xhat[1]])
        if lam.min() < -tol:
            raise DomainError(f"point {xhat.tolist()} lies outside the reference triangle")
        best, best_val = 0, -np.inf
        for c in range(3):
            bc = _barycentric(self.cells[c], xhat)
            if bc.min() > best_val:
                best, best_val = c, bc.min()
        return best

    def table(self, order):
        """Basis values and gradients at a per-cell quadrature rule (cached)."""
        if order in self._tables:
            return self._tables[order]
        rule = triangle_quadrature(order)
        pts, wts, cell = [], [], []
        for c in range(3):
            p, w = rule.mapped(self.cells[c])
            pts.append(p)
            wts.append(w)
            cell.append(np.full(len(w), c))
        pts = np.concatenate(pts)
        wts = np.concatenate(wts)
        cell = np.concatenate(cell)
        nq, M = len(pts), self.num_nodes
        npc = self.pressure_dim_per_cell
        values = np.zeros((nq, M))
        grads = np.zeros((nq, M, 2))
        pvalues = np.zeros((nq, 3 * npc))
        for c in range(3):
            sel = cell == c
            idx = self.cell_nodes[c]
            basis = self.cell_bases[c]
            values[np.ix_(sel, idx)] = basis(pts[sel])
            grads[np.ix_(sel, idx, [0])] = basis(pts[sel], 1, 0)[:, :, None]
            grads[np.ix_(sel, idx, [1])] = basis(pts[sel], 0, 1)[:, :, None]
            pvalues[sel, c * npc:(c + 1) * npc] = self.pressure_bases[c](pts[sel])
        tab = MacroTable(order, pts, wts, cell, values, grads, pvalues)
        self._tables[order] = tab
        return tab


def _barycentric(corners, x):
    corners = np.asarray(corners)
    T = np.column_stack([corners[0] - corners[2], corners[1] - corners[2]])
    l01 = np.linalg.solve(T, np.asarray(x) - corners[2])
    return np.array([l01[0], l01[1], 1.0 - l01.sum()])


@lru_cache(maxsize=None)
def build_reference_element(k: int, edge_placement: str = "gauss-lobatto") -> ReferenceMacroElement:
    """Clough-Tocher macro-element of degree ``k`` with M_k scalar nodes."""
    if not 2 <= k <= 6:
        raise ConstructionError(f"macro-element degree must be in [2, 6], got {k}")
    if edge_placement not in PLACEMENTS:
        raise ConstructionError(f"unknown edge placement {edge_placement!r}")
    t = edge_parameters(k, edge_placement)
    corners = np.vstack([VERTICES, BARYCENTER])

    nodes, tags = [], []
    for i in range(4):
        nodes.append(corners[i])
        tags.append(("vertex", i))
    # boundary edges, then split edges (v_i -> barycenter)
    split_edges = list(EDGES) + [(0, 3), (1, 3), (2, 3)]
    for e, (a, b) in enumerate(split_edges):
        for j, tj in enumerate(t):
            nodes.append((1 - tj) * corners[a] + tj * corners[b])
            tags.append(("edge", e, j))
    cells = np.array([[corners[(i + 1) % 3], corners[(i + 2) % 3], corners[3]] for i in range(3)])
    lat = _lattice_interior(k)
    for c in range(3):
        for j, lam in enumerate(lat):
            nodes.append(lam @ cells[c])
            tags.append(("interior", c, j))
    nodes = np.array(nodes)

    def idx_of(pred):
        return [j for j, tg in enumerate(tags) if pred(tg)]

    cell_nodes, cell_bases, pressure_bases, pressure_nodes = [], [], [], []
    for c in range(3):
        a, b = (c + 1) % 3, (c + 2) % 3
        idx = [a, b, 3]
        idx += idx_of(lambda tg: tg[0] == "edge" and tg[1] == c)
        idx += idx_of(lambda tg: tg[0] == "edge" and tg[1] == 3 + a)
        idx += idx_of(lambda tg: tg[0] == "edge" and tg[1] == 3 + b)
        idx += idx_of(lambda tg: tg[0] == "interior" and tg[1] == c)
        cell_nodes.append(idx)
        center = cells[c].mean(axis=0)
        cell_bases.append(LagrangeBasis(nodes[idx], k, center))
        pn = _lattice_all(k - 1) @ cells[c]
        pressure_nodes.append(pn)
        pressure_bases.append(LagrangeBasis(pn, k - 1, center))

    elem = ReferenceMacroElement(
        degree=k,
        edge_placement=edge_placement,
        nodes=nodes,
        tags=tags,
        cells=cells,
        cell_nodes=np.array(cell_nodes),
        cell_bases=cell_bases,
        pressure_bases=pressure_bases,
        pressure_nodes=np.array(pressure_nodes),
    )
    expected = 4 + 6 * (k - 1) + 3 * (k - 1) * (k - 2) // 2
    if elem.num_nodes != expected:  # pragma: no cover - construction invariant
        raise ConstructionError(f"built {elem.num_nodes} nodes, expected {expected}")
    return elem


def eval_scalar_basis(elem: ReferenceMacroElement, xhat):
    """Values (M,) and gradients (M, 2) of the CT Lagrange basis at ``xhat``."""
    c = elem.locate(xhat)
    pt = np.atleast_2d(np.asarray(xhat, dtype=float))
    basis = elem.cell_bases[c]
    idx = elem.cell_nodes[c]
    values = np.zeros(elem.num_nodes)
    grads = np.zeros((elem.num_nodes, 2))
    values[idx] = basis(pt)[0]
    grads[idx, 0] = basis(pt, 1, 0)[0]
    grads[idx, 1] = basis(pt, 0, 1)[0]
    return values, grads


@dataclass(frozen=True)
class PlainTriangle:
    """Degree-k Lagrange triangle (no split) carrying the geometry maps.

    Node order: 3 vertices, the k-1 nodes of e0, e1, e2 (Gauss-Lobatto
    parameters, first vertex to second), then interior lattice points.
    """

    degree: int
    nodes: np.ndarray
    barycentric: np.ndarray
    edge_nodes: tuple
    basis: LagrangeBasis

    @property
    def num_nodes(self):
        return len(self.nodes)

    def interior_nodes(self):
        return np.arange(3 + 3 * (self.degree - 1), self.num_nodes)


@lru_cache(maxsize=None)
def plain_triangle(k: int) -> PlainTriangle:
    if not 1 <= k <= 6:
        raise ConstructionError(f"geometry degree must be in [1, 6], got {k}")
    t = gauss_lobatto_rule(k).interior if k > 1 else np.array([])
    bary = [np.eye(3)[i] for i in range(3)]
    edge_nodes = []
    for a, b in EDGES:
        inner = []
        for tj in t:
            lam = np.zeros(3)
            lam[a], lam[b] = 1 - tj, tj
            inner.append(len(bary))
            bary.append(lam)
        edge_nodes.append((a, *inner, b))
    bary.extend(_lattice_interior(k))
    bary = np.array(bary)
    nodes = bary @ VERTICES
    return PlainTriangle(k, nodes, bary, tuple(edge_nodes),
                         LagrangeBasis(nodes, k, center=BARYCENTER))
