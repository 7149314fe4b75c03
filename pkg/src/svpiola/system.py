"""Stokes saddle-point system: assembly, source interpolation and solution."""
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.io import mmwrite
from scipy.sparse.linalg import splu

from .errors import SolverError
from .kernels import element_matrices, field_values
from .spaces import PressureSpace, VelocitySpace, point_tables

__all__ = [
    "SourceField",
    "SaddleSystem",
    "SolutionField",
    "interpolate_source",
    "assemble",
    "solve",
    "field_eval",
    "dump_system",
]


@dataclass(eq=False)
class SourceField:
    """Standard isoparametric nodal interpolant of the source (no Piola factor)."""

    space: VelocitySpace
    node_values: np.ndarray  # (N, 2)

    def local(self):
        return self.node_values[self.space.element_nodes]

    def evaluate(self, order):
        """Physical points, values and weights * det J at a volume rule."""
        T = self.space.tables(order)
        std = self.space.as_mode("standard-isoparametric")
        x, f, _, _, _, det = field_values(std.mesh.coefficients, T, self.local(), False)
        return x, f, T.W[None, :] * det


def interpolate_source(f, space: VelocitySpace) -> SourceField:
    return SourceField(space, np.asarray(f(space.node_coords), dtype=float).reshape(-1, 2))


@dataclass(eq=False)
class SaddleSystem:
    velocity: VelocitySpace
    pressure: PressureSpace
    nu: float
    A: sp.csr_matrix  # free x free
    B: sp.csr_matrix  # pressure x free
    m: np.ndarray  # pressure
    rhs: np.ndarray  # free
    local: dict = field(repr=False, default_factory=dict)

    @property
    def num_velocity(self):
        return self.A.shape[0]

    @property
    def num_pressure(self):
        return self.B.shape[0]

    def bordered(self):
        """The full symmetric matrix [[A, B^T, 0], [B, 0, m], [0, m^T, 0]]."""
        m = sp.csr_matrix(self.m[:, None])
        return sp.bmat([[self.A, self.B.T, None],
                        [self.B, None, m],
                        [None, m.T, None]], format="csc")

    def full_rhs(self):
        return np.concatenate([self.rhs, np.zeros(self.num_pressure + 1)])


def assemble(velocity: VelocitySpace, pressure: PressureSpace, nu: float, source: SourceField,
             order=None) -> SaddleSystem:
    mesh = velocity.mesh
    k = velocity.degree
    order = 2 * k + 2 if order is None else order
    T = velocity.tables(order)
    Ae, Be, me, fe, _ = element_matrices(mesh.coefficients, T, nu, velocity.piola, source.local())
    E, nd = fe.shape
    gd = velocity.free_index[velocity.element_dofs()]  # (E, 2M)
    pd = pressure.element_dofs()

    ok = (gd[:, :, None] >= 0) & (gd[:, None, :] >= 0)
    rows = np.broadcast_to(gd[:, :, None], Ae.shape)[ok]
    cols = np.broadcast_to(gd[:, None, :], Ae.shape)[ok]
    nf = velocity.num_free
    A = sp.csr_matrix((Ae[ok], (rows, cols)), shape=(nf, nf))
    okb = np.broadcast_to(gd[:, None, :] >= 0, Be.shape)
    brow = np.broadcast_to(pd[:, :, None], Be.shape)[okb]
    bcol = np.broadcast_to(gd[:, None, :], Be.shape)[okb]
    B = sp.csr_matrix((Be[okb], (brow, bcol)), shape=(pressure.num_dofs, nf))
    okf = gd >= 0
    rhs = np.bincount(gd[okf], weights=fe[okf], minlength=nf)
    m = me.reshape(-1)
    return SaddleSystem(velocity, pressure, float(nu), A, B, m, rhs,
                        local={"A": Ae, "B": Be, "m": me, "f": fe, "order": order})


@dataclass(eq=False)
class SolutionField:
    velocity: VelocitySpace
    pressure: PressureSpace
    u: np.ndarray  # full nodal coefficients (2N,)
    p: np.ndarray  # (num pressure,)
    multiplier: float
    residual: float
    method: str

    def local_velocity(self):
        return self.velocity.local(self.u)

    def local_pressure(self):
        return self.p.reshape(self.pressure.mesh.num_elements, -1)


class _Condensed:
    """Static condensation of element-internal velocity and pressure modes.

    Per element the pressure is split as p = pi * 1 + Z p~ with Z an
    orthonormal basis of {q : m_T . q = 0}. Internal velocity, p~ are
    eliminated; shared velocity DOFs, pi per element and the global
    multiplier remain.
    """

    def __init__(self, system: SaddleSystem):
        V, Pspace = system.velocity, system.pressure
        loc = system.local
        Ae, Be, me = loc["A"], loc["B"], loc["m"]
        E, nd = Ae.shape[:2]
        P = Be.shape[1]
        shared = np.repeat(V.reference.shared_mask, 2)
        iI = np.nonzero(~shared)[0]
        iS = np.nonzero(shared)[0]
        nI, nS = len(iI), len(iS)

        # Z: (E, P, P-1); columns orthonormal and orthogonal to m_T
        _, _, vh = np.linalg.svd(me[:, None, :])
        Z = np.transpose(vh[:, 1:, :], (0, 2, 1))
        area = me.sum(axis=1)  # m_T . 1 = |T|

        A_II = Ae[:, iI][:, :, iI]
        A_IS = Ae[:, iI][:, :, iS]
        A_SS = Ae[:, iS][:, :, iS]
        B_I = Be[:, :, iI]
        B_S = Be[:, :, iS]
        one = np.ones(P)
        bI = one @ B_I  # (E, nI), vanishes up to rounding
        bS = one @ B_S
        ZB_I = np.einsum("epr,epi->eri", Z, B_I)
        ZB_S = np.einsum("epr,epi->eri", Z, B_S)

        ny = nI + P - 1
        nk = nS + 1
        Kyy = np.zeros((E, ny, ny))
        Kyy[:, :nI, :nI] = A_II
        Kyy[:, :nI, nI:] = np.transpose(ZB_I, (0, 2, 1))
        Kyy[:, nI:, :nI] = ZB_I
        Kyk = np.zeros((E, ny, nk))
        Kyk[:, :nI, :nS] = A_IS
        Kyk[:, :nI, nS] = bI
        Kyk[:, nI:, :nS] = ZB_S
        Kkk = np.zeros((E, nk, nk))
        Kkk[:, :nS, :nS] = A_SS
        Kkk[:, :nS, nS] = bS
        Kkk[:, nS, :nS] = bS
        try:
            Kinv = np.linalg.inv(Kyy)
        except np.linalg.LinAlgError as exc:
            raise SolverError("singular element-level saddle block") from exc
        W = Kinv @ Kyk  # (E, ny, nk)
        S = Kkk - np.einsum("eyk,eyl->ekl", Kyk, W)

        gdofs = V.element_dofs()
        fidx = V.free_index[gdofs]  # (E, 2M)
        # condensed unknown numbering: free shared velocity DOFs, then pi, then lambda
        shared_free = np.unique(fidx[:, iS][fidx[:, iS] >= 0])
        cmap = -np.ones(V.num_free, dtype=np.int64)
        cmap[shared_free] = np.arange(len(shared_free))
        nu_s = len(shared_free)
        kidx = np.empty((E, nk), dtype=np.int64)
        fs = fidx[:, iS]
        kidx[:, :nS] = np.where(fs >= 0, cmap[np.maximum(fs, 0)], -1)
        kidx[:, nS] = nu_s + np.arange(E)
        n = nu_s + E + 1
        ok = (kidx[:, :, None] >= 0) & (kidx[:, None, :] >= 0)
        rows = np.broadcast_to(kidx[:, :, None], S.shape)[ok]
        cols = np.broadcast_to(kidx[:, None, :], S.shape)[ok]
        lam = n - 1
        rows = np.concatenate([rows, nu_s + np.arange(E), np.full(E, lam)])
        cols = np.concatenate([cols, np.full(E, lam), nu_s + np.arange(E)])
        vals = np.concatenate([S[ok], area, area])
        K = sp.csc_matrix((vals, (rows, cols)), shape=(n, n))
        try:
            self.lu = splu(K, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"condensed factorization failed: {exc}") from exc

        self.iI, self.iS, self.Z, self.Kinv, self.Kyk, self.W = iI, iS, Z, Kinv, Kyk, W
        self.fidx, self.kidx, self.nS, self.nI, self.n = fidx, kidx, nS, nI, n
        self.P, self.E = P, E
        self.shared_free, self.nu_s = shared_free, nu_s
        self.num_free, self.num_p = V.num_free, Pspace.num_dofs

    def solve(self, rhs):
        """Solve the bordered system for a full right-hand side vector."""
        nf, npr = self.num_free, self.num_p
        gu, gp, glam = rhs[:nf], rhs[nf:nf + npr].reshape(self.E, self.P), rhs[-1]
        fI = self.fidx[:, self.iI]
        gy = np.concatenate([gu[fI], np.einsum("epr,ep->er", self.Z, gp)], axis=1)
        Kg = np.einsum("eyz,ez->ey", self.Kinv, gy)
        corr = np.einsum("eyk,ey->ek", self.Kyk, Kg)
        g = np.zeros(self.n)
        g[:self.nu_s] = gu[self.shared_free]
        g[self.nu_s:self.nu_s + self.E] = gp.sum(axis=1)
        g[-1] = glam
        ok = self.kidx >= 0
        g -= np.bincount(self.kidx[ok], weights=corr[ok], minlength=self.n)
        xk = self.lu.solve(g)
        xk_loc = np.where(ok, xk[np.maximum(self.kidx, 0)], 0.0)
        y = Kg - np.einsum("eyk,ek->ey", self.W, xk_loc)
        u = np.zeros(nf)
        u[self.shared_free] = xk[:self.nu_s]
        u[fI] = y[:, :self.nI]
        pi = xk[self.nu_s:self.nu_s + self.E]
        p = pi[:, None] + np.einsum("epr,er->ep", self.Z, y[:, self.nI:])
        return np.concatenate([u, p.reshape(-1), [xk[-1]]])


def solve(system: SaddleSystem, method="condensed", tol=1e-10, refine_steps=3) -> SolutionField:
    """Solve the bordered saddle system; raises SolverError if the residual contract fails."""
    K = system.bordered()
    b = system.full_rhs()
    if method == "condensed":
        solver = _Condensed(system).solve
    elif method == "direct":
        try:
            lu = splu(K)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}") from exc
        solver = lu.solve
    else:
        raise ValueError(f"unknown solve method {method!r}")

    x = solver(b)
    scale = max(np.linalg.norm(b), 1e-300)
    res = np.linalg.norm(b - K @ x) / scale
    for _ in range(refine_steps):
        if res <= 1e-14:
            break
        dx = solver(b - K @ x)
        x_new = x + dx
        res_new = np.linalg.norm(b - K @ x_new) / scale
        if res_new >= res:
            break
        x, res = x_new, res_new
    if not np.all(np.isfinite(x)):
        raise SolverError("non-finite solution: singular system")
    if np.linalg.norm(b) == 0.0:
        res = float(np.linalg.norm(K @ x))
    if res > tol:
        raise SolverError(f"relative residual {res:.3e} exceeds {tol:.1e}")
    nf, npr = system.num_velocity, system.num_pressure
    u = system.velocity.expand(x[:nf])
    return SolutionField(system.velocity, system.pressure, u, x[nf:nf + npr].copy(),
                         float(x[-1]), float(res), method)


def field_eval(solution: SolutionField, element: int, xhat):
    """(u, grad u, div u, p) of the discrete solution at ``xhat`` in ``element``."""
    V = solution.velocity
    T = point_tables(V.reference, V.mesh.degree, [xhat])
    X = V.mesh.coefficients[element][None]
    U = solution.local_velocity()[element][None]
    _, u, gu, dv, _, _ = field_values(X, T, U, V.piola)
    p = T.PV[0] @ solution.local_pressure()[element]
    return u[0, 0], gu[0, 0], float(dv[0, 0]), float(p)


def dump_system(system: SaddleSystem, directory):
    """Write A, B, m and the load vector as Matrix Market files."""
    os.makedirs(directory, exist_ok=True)
    mmwrite(os.path.join(directory, "A.mtx"), system.A, precision=17)
    mmwrite(os.path.join(directory, "B.mtx"), system.B, precision=17)
    mmwrite(os.path.join(directory, "m.mtx"), system.m[:, None], precision=17)
    mmwrite(os.path.join(directory, "rhs.mtx"), system.rhs[:, None], precision=17)
