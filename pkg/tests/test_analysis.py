import numpy as np
import pytest
import scipy.linalg as sla
from scipy.sparse.linalg import splu

from svpiola import build_geometry_maps, build_spaces
from svpiola.analysis import (ConvergenceTable, ErrorReport, compute_rates, divergence_sup,
                              edge_jump_norms, error_norms, infsup_constant, pressure_mass)
from svpiola.kernels import field_values
from svpiola.spaces import interpolate
from svpiola.system import SolutionField, assemble, interpolate_source

from conftest import DOMAIN, EXACT, single_triangle, solved, spaces

SERIES_L2 = [3.391e-1, 2.392e-2, 1.675e-3, 1.139e-4, 7.183e-6]
SERIES_H = [0.654, 0.318, 0.158, 0.079, 0.039]
SERIES_RATES = [3.672, 3.791, 3.866, 3.985]


def test_rates_simple():
    t = compute_rates([{"err_u_l2": 1.0}, {"err_u_l2": 1 / 8}], columns=("err_u_l2",))
    assert t.rates["err_u_l2"] == [None, 3.0]
    t = compute_rates([{"e": 0.3}] * 3, columns=("e",))
    assert t.rates["e"] == [None, 0.0, 0.0]


def test_rates_log2_of_series():
    t = compute_rates([{"e": v} for v in SERIES_L2], columns=("e",))
    e = np.array(SERIES_L2)
    np.testing.assert_allclose(t.rates["e"][1:], np.log2(e[:-1] / e[1:]), rtol=1e-14)
    np.testing.assert_allclose(t.rates["e"][1:], [3.825, 3.836, 3.878, 3.987], atol=5e-4)


def test_rates_from_mesh_size():
    # these rates are log(e ratio) / log(h ratio) with unrounded h:
    # the h ratio they imply lies inside the rounding interval of the rounded h
    e, h = np.array(SERIES_L2), np.array(SERIES_H)
    implied = np.exp(np.log(e[:-1] / e[1:]) / np.array(SERIES_RATES))
    lo = (h[:-1] - 5e-4) / (h[1:] + 5e-4)
    hi = (h[:-1] + 5e-4) / (h[1:] - 5e-4)
    assert np.all((lo <= implied) & (implied <= hi))
    t = compute_rates([{"e": v, "h": hh} for v, hh in zip(SERIES_L2, SERIES_H)], ("e",), use_h=True)
    np.testing.assert_allclose(t.rates["e"][1:3], SERIES_RATES[:2], atol=0.015)


def test_rates_nonpositive_marked():
    t = compute_rates([{"e": 1.0}, {"e": 0.0}, {"e": 0.5}], columns=("e",))
    assert t.rates["e"] == [None, None, None]


def test_report_entries_nonnegative():
    mesh, V, _ = spaces(0)
    _, sol = solved(0)
    r = error_norms(sol, EXACT)
    vals = [v for k, v in r.as_row().items() if isinstance(v, float) and not np.isnan(v)]
    assert min(vals) >= 0
    assert r.h == mesh.h
    assert r.dofs_u == V.num_free


def test_error_of_interpolant_equals_interpolation_error():
    mesh, V, Q = spaces(1)
    c = interpolate(V, EXACT.velocity)
    sol = SolutionField(V, Q, c, np.zeros(Q.num_dofs), 0.0, 0.0, "interpolant")
    rep = error_norms(sol, EXACT)
    T = V.tables(10)
    x, u, _, _, _, det = field_values(mesh.coefficients, T, V.local(c), True)
    direct = np.sqrt(np.sum(T.W[None] * det * np.sum((u - EXACT.velocity(x)) ** 2, axis=-1)))
    assert rep.err_u_l2 == pytest.approx(direct, rel=1e-12)


def test_zero_field_error_is_solution_norm():
    from test_geometry import _ellipse_integral
    mesh, V, Q = spaces(2)
    sol = SolutionField(V, Q, np.zeros(V.num_dofs), np.zeros(Q.num_dofs), 0.0, 0.0, "zero")
    rep = error_norms(sol, EXACT)
    norm = np.sqrt(_ellipse_integral(DOMAIN, lambda x: np.sum(EXACT.velocity(x) ** 2, axis=-1)))
    assert rep.err_u_l2 > 0
    assert rep.err_u_l2 == pytest.approx(norm, rel=1e-4)


@pytest.mark.parametrize("level", [0, 1, 2])
def test_piola_divergence_free(level):
    _, sol = solved(level)
    dsup, gnorm = divergence_sup(sol)
    assert dsup <= 1e-10 * gnorm


def test_standard_isoparametric_not_divergence_free():
    _, sol = solved(0, mode="standard-isoparametric")
    assert divergence_sup(sol)[0] >= 1e-3


def test_affine_mesh_divergence_free():
    _, sol = solved(1, geo="force-affine")
    dsup, gnorm = divergence_sup(sol)
    assert dsup <= 1e-11 * max(gnorm, 1.0)


def test_jumps_vanish_on_affine_mesh(rng):
    _, V, _ = spaces(1, geo="force-affine")
    c = V.expand(rng.standard_normal(V.num_free))
    n, t = edge_jump_norms(c, V)
    assert n <= 1e-20 and t <= 1e-20


def test_normal_jump_vanishes_piola(rng):
    _, V, _ = spaces(1)
    for _ in range(3):
        n, t = edge_jump_norms(V.expand(rng.standard_normal(V.num_free)), V)
        assert n <= 1e-20 and t > 1e-10


def _jump_rates(placement, levels=range(0, 4)):
    out = []
    for level in levels:
        _, V, _ = spaces(level, placement=placement)
        out.append(edge_jump_norms(interpolate(V, EXACT.velocity), V, moments=True))
    out = np.array(out)
    return np.log2(out[:-1] / out[1:])


def test_tangential_jump_decay_gauss_lobatto():
    rates = _jump_rates("gauss-lobatto")
    k = 3
    assert rates[-1, 1] >= 2 * k - 1
    assert rates[-1, 2] >= 2 * k - 1


def test_tangential_jump_moments_drop_with_equidistant_nodes():
    gl = _jump_rates("gauss-lobatto")
    eq = _jump_rates("equidistant")
    # the moment-tested jump loses accuracy without Gauss-Lobatto nodes
    assert eq[-1, 2] < gl[-1, 2] - 1.0
    _, Vg, _ = spaces(3)
    _, Ve, _ = spaces(3, placement="equidistant")
    mg = edge_jump_norms(interpolate(Vg, EXACT.velocity), Vg, moments=True)[2]
    me = edge_jump_norms(interpolate(Ve, EXACT.velocity), Ve, moments=True)[2]
    assert mg < 1e-2 * me


@pytest.fixture(scope="module")
def infsup_levels():
    out = []
    for level in range(3):
        system, _ = solved(level)
        out.append(infsup_constant(system))
    return out


def test_infsup_uniform_on_levels(infsup_levels):
    assert min(infsup_levels) > 0
    assert max(infsup_levels) <= 2 * min(infsup_levels)


def test_infsup_dense_matches_iterative():
    system, _ = solved(0)
    d = infsup_constant(system, method="dense")
    i = infsup_constant(system, method="iterative")
    assert d == pytest.approx(i, rel=1e-8)


def test_infsup_k2_and_k3_positive():
    for k in (2, 3):
        system, _ = solved(0, k)
        assert infsup_constant(system) > 0


def test_infsup_dense_cap_refuses():
    system, _ = solved(1)
    with pytest.raises(ValueError, match="iterative"):
        infsup_constant(system, cap=100, method="dense")


def test_infsup_piecewise_constants_single_element():
    k = 2
    mesh = build_geometry_maps(single_triangle(), k, "force-affine")
    V, Q = build_spaces(mesh, k)
    S = assemble(V, Q, 1.0, interpolate_source(lambda x: np.zeros_like(x), V))
    npc = Q.per_cell
    # cellwise constants: each cell's pressure block sums to one
    P0 = np.zeros((Q.num_dofs, 3))
    for c in range(3):
        P0[c * npc:(c + 1) * npc, c] = 1.0
    Mp = pressure_mass(Q, V)[0]
    M0 = P0.T @ Mp @ P0
    area = np.diag(M0)
    Z = sla.null_space(area[None, :])  # mean-zero combinations
    B0 = P0.T @ S.B.toarray()
    Ainv_Bt = splu(S.A.tocsc()).solve((Z.T @ B0).T)
    Sred = (Z.T @ B0) @ Ainv_Bt
    mu = sla.eigh(0.5 * (Sred + Sred.T), Z.T @ M0 @ Z, eigvals_only=True)
    assert mu.min() > 1e-8


def test_convergence_table_rate_accessor():
    t = compute_rates([ErrorReport(0, 1.0, 1, 1, 1.0, 1.0, 1.0, 0.0),
                       ErrorReport(1, 0.5, 1, 1, 0.25, 0.5, 0.5, 0.0)])
    assert isinstance(t, ConvergenceTable)
    assert t.rate("err_u_l2") == 2.0 and t.rate("err_u_h1") == 1.0
