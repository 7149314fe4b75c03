"""Error norms, convergence rates and structural diagnostics."""
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, eigsh, splu

from .geometry import ManufacturedSolution
from .kernels import field_values
from .spaces import PressureSpace, VelocitySpace, edge_traces

__all__ = [
    "ErrorReport",
    "ConvergenceTable",
    "error_norms",
    "divergence_sup",
    "edge_jump_norms",
    "infsup_constant",
    "compute_rates",
    "area_mismatch",
    "source_error",
    "pressure_mass",
]

RATE_COLUMNS = ("err_u_l2", "err_u_h1", "err_p_l2")


@dataclass
class ErrorReport:
    level: int
    h: float
    dofs_u: int
    dofs_p: int
    err_u_l2: float
    err_u_h1: float
    err_p_l2: float
    div_sup: float
    grad_norm: float = float("nan")
    normal_jump: float = float("nan")
    tangential_jump: float = float("nan")
    infsup: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def as_row(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "extra"}


@dataclass
class ConvergenceTable:
    reports: list
    rates: dict  # column -> list with None in front and where undefined

    def rate(self, column, i=-1):
        return self.rates[column][i]


def _ratio_rate(prev, cur, hprev=None, hcur=None):
    if not (prev > 0 and cur > 0):
        return None
    if hprev is None:
        return float(np.log2(prev / cur))
    return float(np.log(prev / cur) / np.log(hprev / hcur))


def compute_rates(reports, columns=RATE_COLUMNS, use_h=False) -> ConvergenceTable:
    """Consecutive log2 ratios (h halves per level); nonpositive errors give None.

    ``use_h=True`` divides by log(h_{i-1}/h_i) instead, for meshes whose h
    does not exactly halve.
    """
    reports = list(reports)
    get = lambda r, c: r[c] if isinstance(r, dict) else getattr(r, c)
    hs = [get(r, "h") for r in reports] if use_h else [None] * len(reports)
    rates = {}
    for col in columns:
        vals = [get(r, col) for r in reports]
        rates[col] = [None] + [_ratio_rate(a, b, ha, hb) for a, b, ha, hb
                               in zip(vals[:-1], vals[1:], hs[:-1], hs[1:])]
    return ConvergenceTable(reports, rates)


def _volume(space: VelocitySpace, coeffs, order):
    T = space.tables(order)
    x, u, gu, dv, dt, det = field_values(space.mesh.coefficients, T, space.local(coeffs), space.piola)
    return T, x, u, gu, dv, dt, T.W[None, :] * det


def error_norms(solution, exact: ManufacturedSolution, order=None, level=0) -> ErrorReport:
    """L2 and broken H1 velocity errors and L2 pressure error over Omega_h."""
    V, Q = solution.velocity, solution.pressure
    k = V.degree
    order = 2 * k + 4 if order is None else order
    T, x, u, gu, dv, dt, wd = _volume(V, solution.u, order)
    eu = float(np.sqrt(np.sum(wd * np.sum((u - exact.velocity(x)) ** 2, axis=-1))))
    eg = float(np.sqrt(np.sum(wd * np.sum((gu - exact.velocity_gradient(x)) ** 2, axis=(-1, -2)))))
    ph = np.einsum("qr,er->eq", T.PV, solution.local_pressure())
    pe = exact.pressure(x)
    area = wd.sum()
    pe = pe - np.sum(wd * pe) / area
    ph = ph - np.sum(wd * ph) / area
    ep = float(np.sqrt(np.sum(wd * (ph - pe) ** 2)))
    dsup, gnorm = divergence_sup(solution)
    return ErrorReport(level, V.mesh.h, V.num_free, Q.num_dofs, eu, eg, ep, dsup, gnorm,
                       extra={"residual": solution.residual})


def divergence_sup(solution, order=None):
    """(max |div u_h| at the volume quadrature points, ||grad_h u_h||_L2).

    The maximum is taken over both divergence formulas (Piola identity and
    trace of the chain-rule gradient).
    """
    V = solution.velocity
    order = 2 * V.degree + 2 if order is None else order
    _, _, _, gu, dv, dt, wd = _volume(V, solution.u, order)
    gnorm = float(np.sqrt(np.sum(wd * np.sum(gu ** 2, axis=(-1, -2)))))
    return float(max(np.abs(dv).max(), np.abs(dt).max())), gnorm


def edge_jump_norms(coeffs, space: VelocitySpace, moments=False):
    """sum_e h_e^{-1} int_e |[v.n]|^2 and the same for [v.t] over interior edges.

    With ``moments=True`` also returns the tangential jump tested against
    Legendre polynomials of degree <= k-2 on each edge (sum of squares,
    scaled like the jump functional).
    """
    inner, w, v1, v2, n, t, length = edge_traces(space, coeffs)
    jump = v1 - v2
    jn = np.einsum("eqi,ei->eq", jump, n)
    jt = np.einsum("eqi,ei->eq", jump, t)
    normal = float(np.sum(w[None] * jn ** 2))
    tang = float(np.sum(w[None] * jt ** 2))
    if not moments:
        return normal, tang
    k = space.degree
    s = 2.0 * (np.polynomial.legendre.leggauss(len(w))[0] * 0.5 + 0.5) - 1.0
    mom = 0.0
    for d in range(max(k - 1, 1)):
        Pd = np.polynomial.legendre.Legendre.basis(d)(s) * np.sqrt(2 * d + 1)
        mom += float(np.sum(np.sum(w[None] * Pd[None] * jt, axis=1) ** 2))
    return normal, tang, mom


def pressure_mass(pressure: PressureSpace, velocity: VelocitySpace, order=None):
    """Block-diagonal pressure mass matrix blocks (E, P, P) on the curved mesh."""
    order = 2 * velocity.degree + 2 if order is None else order
    T = velocity.tables(order)
    _, det = velocity.mesh.jacobians(velocity.reference.table(order).points)
    return np.einsum("eq,qr,qs->ers", T.W[None] * det, T.PV, T.PV)


def infsup_constant(system, cap=3000, method="auto", tol=1e-8):
    """Discrete inf-sup constant of b_h on V_h x L2_0 (broken H1 velocity norm).

    Uses a dense generalized eigensolve when the free velocity count is at
    most ``cap``; ``method="iterative"`` (or "auto" above the cap) computes the
    largest eigenvalue of M^{1/2} S^+ M^{1/2} with Lanczos, each step being
    one Stokes solve.
    """
    from .system import _Condensed

    V, Q = system.velocity, system.pressure
    A = system.A / system.nu
    B = system.B
    Mb = pressure_mass(Q, V, system.local.get("order"))
    nu_dofs = A.shape[0]
    if method == "auto":
        method = "dense" if nu_dofs <= cap else "iterative"
    if method == "dense":
        if nu_dofs > cap:
            raise ValueError(f"{nu_dofs} velocity DOFs exceed the dense cap {cap}; "
                             "use method='iterative' or a coarser mesh")
        Bd = B.toarray()
        X = splu(sp.csc_matrix(A)).solve(Bd.T)
        S = Bd @ X
        S = 0.5 * (S + S.T)
        M = sla.block_diag(*Mb)
        mu = sla.eigh(S, M, eigvals_only=True)
        mu = mu[mu > tol * mu.max()]
        return float(np.sqrt(mu.min()))
    if method != "iterative":
        raise ValueError(f"unknown method {method!r}")

    unit = type(system)(V, Q, 1.0, system.A / system.nu, system.B, system.m,
                        np.zeros_like(system.rhs),
                        local={**system.local, "A": system.local["A"] / system.nu})
    solver = _Condensed(unit)
    Lc = np.linalg.cholesky(Mb)  # M_T = L L^T
    E, P = Mb.shape[:2]
    nf, npr = nu_dofs, Q.num_dofs

    def apply(z):
        y = np.einsum("ers,es->er", Lc, z.reshape(E, P)).reshape(-1)
        rhs = np.concatenate([np.zeros(nf), -y, [0.0]])
        p = solver.solve(rhs)[nf:nf + npr].reshape(E, P)
        return np.einsum("esr,es->er", Lc, p).reshape(-1)

    op = LinearOperator((npr, npr), matvec=apply, dtype=float)
    lam = eigsh(op, k=1, which="LA", tol=1e-10, return_eigenvectors=False, v0=np.ones(npr))
    return float(1.0 / np.sqrt(lam[0]))


def area_mismatch(mesh) -> float:
    """|Omega_h| - |Omega| by quadrature of 1 over the curved mesh."""
    from .reference import build_reference_element
    k = max(mesh.degree, 2)
    tab = build_reference_element(k).table(2 * k + 2)
    _, det = mesh.jacobians(tab.points)
    return float(np.sum(tab.weights[None] * det) - mesh.domain.area)


def source_error(f, source, order=None) -> float:
    """||f - f_h||_{L2(Omega_h)} for a nodal source interpolant."""
    order = 2 * source.space.degree + 4 if order is None else order
    x, fh, wd = source.evaluate(order)
    return float(np.sqrt(np.sum(wd * np.sum((f(x) - fh) ** 2, axis=-1))))
