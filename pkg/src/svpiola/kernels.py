"""Element-level kernels: local Stokes matrices and field evaluation.

Every kernel exists twice: a loop version compiled with numba and an einsum
version in plain numpy. ``SVPIOLA_NUMBA=0`` selects the numpy path. Arrays:

    X    (E, G, 2)   geometry coefficients of each element
    GD   (Q, G, 2)   first derivatives of the geometry basis at the points
    GH   (Q, G, 3)   second derivatives (xx, xy, yy)
    GDN  (M, G, 2)   first derivatives of the geometry basis at velocity nodes
    L    (Q, M)      scalar macro basis at the points, LD (Q, M, 2) its gradient
    PV   (Q, P)      pressure basis, W (Q,) reference weights

Local velocity DOF 2*j + c is component c of the nodal value at node j.
"""
from dataclasses import dataclass

import numpy as np

from ._jit import USE_NUMBA, njit, prange

__all__ = ["KernelTables", "element_matrices", "field_values", "backend"]

_CHUNK = 128


@dataclass(frozen=True)
class KernelTables:
    GV: np.ndarray
    GD: np.ndarray
    GH: np.ndarray
    GDN: np.ndarray
    L: np.ndarray
    LD: np.ndarray
    PV: np.ndarray
    W: np.ndarray


def backend():
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy path

def _geometry_np(X, GD, GH):
    J = np.einsum("egi,qgm->eqim", X, GD)
    Hs = np.einsum("egi,qgs->eqis", X, GH)
    # dJ[..., i, m, n] = d^2 F_i / dxhat_m dxhat_n
    dJ = np.stack([
        np.stack([Hs[..., 0], Hs[..., 1]], axis=-1),
        np.stack([Hs[..., 1], Hs[..., 2]], axis=-1),
    ], axis=-2)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    adj = np.empty_like(J)
    adj[..., 0, 0] = J[..., 1, 1]
    adj[..., 1, 1] = J[..., 0, 0]
    adj[..., 0, 1] = -J[..., 0, 1]
    adj[..., 1, 0] = -J[..., 1, 0]
    Jinv = adj / det[..., None, None]
    A = J / det[..., None, None]
    ddet = np.einsum("eqki,eqikn->eqn", adj, dJ)
    dA = dJ / det[..., None, None, None] - J[..., None] * (ddet / det[..., None] ** 2)[..., None, None, :]
    return J, det, Jinv, A, dA


def _node_frames_np(X, GDN, piola):
    E, M = X.shape[0], GDN.shape[0]
    if not piola:
        return np.broadcast_to(np.eye(2), (E, M, 2, 2))
    JN = np.einsum("egi,jgm->ejim", X, GDN)
    D = np.empty_like(JN)  # D[..., :, c] = adj(J(a_j)) e_c
    D[..., 0, 0] = JN[..., 1, 1]
    D[..., 1, 1] = JN[..., 0, 0]
    D[..., 0, 1] = -JN[..., 0, 1]
    D[..., 1, 0] = -JN[..., 1, 0]
    return D


def _shapes_np(X, T, piola):
    """Values (E,Q,M,c,i), gradients (E,Q,M,c,i,l), divergence both ways."""
    J, det, Jinv, A, dA = _geometry_np(X, T.GD, T.GH)
    D = _node_frames_np(X, T.GDN, piola)
    if piola:
        Aw = np.einsum("eqik,ejkc->eqjci", A, D)
        dAw = np.einsum("eqikn,ejkc->eqjcin", dA, D)
        val = T.L[None, :, :, None, None] * Aw
        dv = T.LD[None, :, :, None, None, :] * Aw[..., None] + T.L[None, :, :, None, None, None] * dAw
        grad = np.einsum("eqjcin,eqnl->eqjcil", dv, Jinv)
        div_ref = np.einsum("qjn,ejnc->eqjc", T.LD, D)
        div = div_ref / det[:, :, None, None]
    else:
        E = X.shape[0]
        Q, M = T.L.shape
        val = np.zeros((E, Q, M, 2, 2))
        val[..., 0, 0] = T.L
        val[..., 1, 1] = T.L
        pg = np.einsum("qjn,eqnl->eqjl", T.LD, Jinv)
        grad = np.zeros((E, Q, M, 2, 2, 2))
        grad[:, :, :, 0, 0, :] = pg
        grad[:, :, :, 1, 1, :] = pg
        div = np.stack([pg[..., 0], pg[..., 1]], axis=-1)
    divtr = grad[..., 0, 0] + grad[..., 1, 1]
    return det, val, grad, div, divtr


def _element_matrices_np(X, T, nu, piola, FN):
    E = X.shape[0]
    Q, M = T.L.shape
    P = T.PV.shape[1]
    Ae = np.empty((E, 2 * M, 2 * M))
    Be = np.empty((E, P, 2 * M))
    me = np.empty((E, P))
    fe = np.empty((E, 2 * M))
    detmin = np.empty(E)
    for s in range(0, E, _CHUNK):
        sl = slice(s, min(s + _CHUNK, E))
        det, val, grad, div, _ = _shapes_np(X[sl], T, piola)
        n = det.shape[0]
        wd = T.W[None, :] * det
        # batched matmuls over (point, i, l) keep BLAS in charge
        G = grad.transpose(0, 2, 3, 1, 4, 5).reshape(n, 2 * M, Q * 4)
        Gw = G * np.repeat(wd, 4, axis=1)[:, None, :]
        Ae[sl] = nu * (Gw @ G.transpose(0, 2, 1))
        Dw = div.reshape(n, Q, 2 * M) * wd[..., None]
        Be[sl] = -(T.PV.T[None] @ Dw)
        me[sl] = wd @ T.PV
        fh = np.einsum("qj,eji->eqi", T.L, FN[sl])
        Vt = val.reshape(n, Q, 2 * M, 2)
        fe[sl] = np.einsum("eqai,eqi->ea", Vt, fh * wd[..., None])
        detmin[sl] = det.min(axis=1)
    return Ae, Be, me, fe, detmin


def _field_values_np(X, T, U, piola):
    E = X.shape[0]
    Q = T.L.shape[0]
    x = np.einsum("qg,egi->eqi", T.GV, X)
    u = np.empty((E, Q, 2))
    gu = np.empty((E, Q, 2, 2))
    dv = np.empty((E, Q))
    dt = np.empty((E, Q))
    det_out = np.empty((E, Q))
    for s in range(0, E, _CHUNK):
        sl = slice(s, min(s + _CHUNK, E))
        J, det, Jinv, A, dA = _geometry_np(X[sl], T.GD, T.GH)
        D = _node_frames_np(X[sl], T.GDN, piola)
        uref = np.einsum("ejkc,ejc->ejk", D, U[sl])  # reference nodal vectors
        vh = np.einsum("qj,ejk->eqk", T.L, uref)
        dvh = np.einsum("qjn,ejk->eqkn", T.LD, uref)
        if piola:
            u[sl] = np.einsum("eqik,eqk->eqi", A, vh)
            d = np.einsum("eqik,eqkn->eqin", A, dvh) + np.einsum("eqikn,eqk->eqin", dA, vh)
            dv[sl] = (dvh[..., 0, 0] + dvh[..., 1, 1]) / det
        else:
            u[sl] = vh
            d = dvh
        g = np.einsum("eqin,eqnl->eqil", d, Jinv)
        gu[sl] = g
        dt[sl] = g[..., 0, 0] + g[..., 1, 1]
        if not piola:
            dv[sl] = dt[sl]
        det_out[sl] = det
    return x, u, gu, dv, dt, det_out


# ---------------------------------------------------------------- numba path

@njit(cache=True, inline="always")
def _geom_point(Xe, GD, GH, q, out):
    # out: J00 J01 J10 J11 and dJ[i][m][n] packed
    G = Xe.shape[0]
    j00 = j01 = j10 = j11 = 0.0
    h0 = np.zeros(3)
    h1 = np.zeros(3)
    for g in range(G):
        x0, x1 = Xe[g, 0], Xe[g, 1]
        j00 += x0 * GD[q, g, 0]
        j01 += x0 * GD[q, g, 1]
        j10 += x1 * GD[q, g, 0]
        j11 += x1 * GD[q, g, 1]
        for s in range(3):
            h0[s] += x0 * GH[q, g, s]
            h1[s] += x1 * GH[q, g, s]
    out[0], out[1], out[2], out[3] = j00, j01, j10, j11
    return h0, h1


@njit(cache=True)
def _frames_nb(Xe, GDN, piola, D):
    M, G = GDN.shape[0], GDN.shape[1]
    for j in range(M):
        if not piola:
            D[j, 0, 0] = 1.0
            D[j, 0, 1] = 0.0
            D[j, 1, 0] = 0.0
            D[j, 1, 1] = 1.0
            continue
        j00 = j01 = j10 = j11 = 0.0
        for g in range(G):
            j00 += Xe[g, 0] * GDN[j, g, 0]
            j01 += Xe[g, 0] * GDN[j, g, 1]
            j10 += Xe[g, 1] * GDN[j, g, 0]
            j11 += Xe[g, 1] * GDN[j, g, 1]
        D[j, 0, 0] = j11
        D[j, 0, 1] = -j01
        D[j, 1, 0] = -j10
        D[j, 1, 1] = j00


@njit(cache=True)
def _point_geometry(Xe, GD, GH, q, Jm, Ji, Am, dA):
    """Fill J, J^{-1}, A and dA[i, k, n] at point q; return det J."""
    h0, h1 = _geom_point(Xe, GD, GH, q, Jm)
    j00, j01, j10, j11 = Jm[0], Jm[1], Jm[2], Jm[3]
    det = j00 * j11 - j01 * j10
    Ji[0, 0] = j11 / det
    Ji[0, 1] = -j01 / det
    Ji[1, 0] = -j10 / det
    Ji[1, 1] = j00 / det
    Am[0, 0] = j00 / det
    Am[0, 1] = j01 / det
    Am[1, 0] = j10 / det
    Am[1, 1] = j11 / det
    for n in range(2):
        # dJ[i, m] along n: H[i, m, n] with packed (xx, xy, yy)
        d00 = h0[n]
        d01 = h0[n + 1]
        d10 = h1[n]
        d11 = h1[n + 1]
        ddet = j11 * d00 - j01 * d10 - j10 * d01 + j00 * d11
        c = ddet / (det * det)
        dA[0, 0, n] = d00 / det - j00 * c
        dA[0, 1, n] = d01 / det - j01 * c
        dA[1, 0, n] = d10 / det - j10 * c
        dA[1, 1, n] = d11 / det - j11 * c
    return det


@njit(parallel=True, cache=True)
def _element_matrices_nb(X, GD, GH, GDN, L, LD, PV, W, nu, piola, FN):
    E = X.shape[0]
    Q, M = L.shape
    P = PV.shape[1]
    nd = 2 * M
    Ae = np.zeros((E, nd, nd))
    Be = np.zeros((E, P, nd))
    me = np.zeros((E, P))
    fe = np.zeros((E, nd))
    detmin = np.empty(E)
    for e in prange(E):
        Xe = X[e]
        D = np.empty((M, 2, 2))
        _frames_nb(Xe, GDN, piola, D)
        Jm = np.empty(4)
        Ji = np.empty((2, 2))
        Am = np.empty((2, 2))
        dA = np.empty((2, 2, 2))
        val = np.empty((nd, 2))
        grd = np.empty((nd, 2, 2))
        dvg = np.empty(nd)
        dmin = np.inf
        for q in range(Q):
            det = _point_geometry(Xe, GD, GH, q, Jm, Ji, Am, dA)
            if det < dmin:
                dmin = det
            for j in range(M):
                lj = L[q, j]
                g0, g1 = LD[q, j, 0], LD[q, j, 1]
                for c in range(2):
                    a = 2 * j + c
                    w0, w1 = D[j, 0, c], D[j, 1, c]
                    if piola:
                        aw0 = Am[0, 0] * w0 + Am[0, 1] * w1
                        aw1 = Am[1, 0] * w0 + Am[1, 1] * w1
                        val[a, 0] = lj * aw0
                        val[a, 1] = lj * aw1
                        for i in range(2):
                            awi = aw0 if i == 0 else aw1
                            r0 = g0 * awi + lj * (dA[i, 0, 0] * w0 + dA[i, 1, 0] * w1)
                            r1 = g1 * awi + lj * (dA[i, 0, 1] * w0 + dA[i, 1, 1] * w1)
                            grd[a, i, 0] = r0 * Ji[0, 0] + r1 * Ji[1, 0]
                            grd[a, i, 1] = r0 * Ji[0, 1] + r1 * Ji[1, 1]
                        dvg[a] = (g0 * w0 + g1 * w1) / det
                    else:
                        p0 = g0 * Ji[0, 0] + g1 * Ji[1, 0]
                        p1 = g0 * Ji[0, 1] + g1 * Ji[1, 1]
                        val[a, 0] = lj if c == 0 else 0.0
                        val[a, 1] = lj if c == 1 else 0.0
                        for i in range(2):
                            grd[a, i, 0] = p0 if i == c else 0.0
                            grd[a, i, 1] = p1 if i == c else 0.0
                        dvg[a] = p0 if c == 0 else p1
            wd = W[q] * det
            f0 = 0.0
            f1 = 0.0
            for j in range(M):
                f0 += L[q, j] * FN[e, j, 0]
                f1 += L[q, j] * FN[e, j, 1]
            for a in range(nd):
                fe[e, a] += wd * (f0 * val[a, 0] + f1 * val[a, 1])
                for b in range(a, nd):
                    s = (grd[a, 0, 0] * grd[b, 0, 0] + grd[a, 0, 1] * grd[b, 0, 1]
                         + grd[a, 1, 0] * grd[b, 1, 0] + grd[a, 1, 1] * grd[b, 1, 1])
                    Ae[e, a, b] += nu * wd * s
                for r in range(P):
                    Be[e, r, a] -= wd * dvg[a] * PV[q, r]
            for r in range(P):
                me[e, r] += wd * PV[q, r]
        for a in range(nd):
            for b in range(a + 1, nd):
                Ae[e, b, a] = Ae[e, a, b]
        detmin[e] = dmin
    return Ae, Be, me, fe, detmin


@njit(parallel=True, cache=True)
def _field_values_nb(X, GV, GD, GH, GDN, L, LD, U, piola):
    E = X.shape[0]
    Q, M = L.shape
    G = X.shape[1]
    x = np.zeros((E, Q, 2))
    u = np.zeros((E, Q, 2))
    gu = np.zeros((E, Q, 2, 2))
    dv = np.zeros((E, Q))
    dt = np.zeros((E, Q))
    dets = np.zeros((E, Q))
    for e in prange(E):
        Xe = X[e]
        D = np.empty((M, 2, 2))
        _frames_nb(Xe, GDN, piola, D)
        ur = np.empty((M, 2))
        for j in range(M):
            ur[j, 0] = D[j, 0, 0] * U[e, j, 0] + D[j, 0, 1] * U[e, j, 1]
            ur[j, 1] = D[j, 1, 0] * U[e, j, 0] + D[j, 1, 1] * U[e, j, 1]
        Jm = np.empty(4)
        Ji = np.empty((2, 2))
        Am = np.empty((2, 2))
        dA = np.empty((2, 2, 2))
        for q in range(Q):
            for g in range(G):
                x[e, q, 0] += GV[q, g] * Xe[g, 0]
                x[e, q, 1] += GV[q, g] * Xe[g, 1]
            det = _point_geometry(Xe, GD, GH, q, Jm, Ji, Am, dA)
            dets[e, q] = det
            v0 = v1 = 0.0
            d00 = d01 = d10 = d11 = 0.0
            for j in range(M):
                lj = L[q, j]
                v0 += lj * ur[j, 0]
                v1 += lj * ur[j, 1]
                d00 += LD[q, j, 0] * ur[j, 0]
                d01 += LD[q, j, 1] * ur[j, 0]
                d10 += LD[q, j, 0] * ur[j, 1]
                d11 += LD[q, j, 1] * ur[j, 1]
            if piola:
                u[e, q, 0] = Am[0, 0] * v0 + Am[0, 1] * v1
                u[e, q, 1] = Am[1, 0] * v0 + Am[1, 1] * v1
                r00 = Am[0, 0] * d00 + Am[0, 1] * d10 + dA[0, 0, 0] * v0 + dA[0, 1, 0] * v1
                r01 = Am[0, 0] * d01 + Am[0, 1] * d11 + dA[0, 0, 1] * v0 + dA[0, 1, 1] * v1
                r10 = Am[1, 0] * d00 + Am[1, 1] * d10 + dA[1, 0, 0] * v0 + dA[1, 1, 0] * v1
                r11 = Am[1, 0] * d01 + Am[1, 1] * d11 + dA[1, 0, 1] * v0 + dA[1, 1, 1] * v1
            else:
                u[e, q, 0] = v0
                u[e, q, 1] = v1
                r00, r01, r10, r11 = d00, d01, d10, d11
            gu[e, q, 0, 0] = r00 * Ji[0, 0] + r01 * Ji[1, 0]
            gu[e, q, 0, 1] = r00 * Ji[0, 1] + r01 * Ji[1, 1]
            gu[e, q, 1, 0] = r10 * Ji[0, 0] + r11 * Ji[1, 0]
            gu[e, q, 1, 1] = r10 * Ji[0, 1] + r11 * Ji[1, 1]
            dt[e, q] = gu[e, q, 0, 0] + gu[e, q, 1, 1]
            dv[e, q] = (d00 + d11) / det if piola else dt[e, q]
    return x, u, gu, dv, dt, dets


# ---------------------------------------------------------------- dispatch

def element_matrices(X, tables: KernelTables, nu, piola, FN, use_numba=None):
    """Local (A, B, m, f, min det J) for every element.

    ``FN`` (E, M, 2) holds the source at the physical element nodes; the
    load uses its nodal interpolant.
    """
    use = USE_NUMBA if use_numba is None else use_numba
    X = np.ascontiguousarray(X, dtype=float)
    FN = np.ascontiguousarray(FN, dtype=float)
    T = tables
    if use:
        return _element_matrices_nb(X, T.GD, T.GH, T.GDN, T.L, T.LD, T.PV, T.W,
                                    float(nu), bool(piola), FN)
    return _element_matrices_np(X, T, float(nu), bool(piola), FN)


def field_values(X, tables: KernelTables, U, piola, use_numba=None):
    """(x, u, grad u, div u, trace of grad u, det J) at the table points.

    ``div u`` uses the Piola identity in piola mode; the trace is computed
    from the chain-rule gradient, so the two are independent.
    """
    use = USE_NUMBA if use_numba is None else use_numba
    X = np.ascontiguousarray(X, dtype=float)
    U = np.ascontiguousarray(U, dtype=float)
    T = tables
    if use:
        return _field_values_nb(X, T.GV, T.GD, T.GH, T.GDN, T.L, T.LD, U, bool(piola))
    return _field_values_np(X, T, U, bool(piola))
