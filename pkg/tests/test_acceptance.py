"""End-to-end acceptance checks; each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` or ``python tests/test_acceptance.py``.
The collected lines are repeated in the pytest terminal summary.
"""
import os
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from svpiola.analysis import edge_jump_norms, infsup_constant
from svpiola.cli import StudyConfig, read_table, run_study
from svpiola.kernels import field_values
from svpiola.mesh import geometry_derivatives, geometry_eval
from svpiola.reference import build_reference_element, eval_scalar_basis, gauss_lobatto_rule
from svpiola.spaces import edge_traces, interpolate

from conftest import ACCEPTANCE, DOMAIN, EXACT, curved_elements, solved, spaces

pytestmark = pytest.mark.slow

# target errors at h = 0.079 for the Gauss-Lobatto study
TARGET_LEVEL3 = {"err_u_l2": 1.139e-4, "err_u_h1": 9.046e-3, "err_p_l2": 1.298e-2}
DOF_BUDGET = 2e5
RUNTIME_BUDGET = 600.0


def report(name, checks):
    """checks: list of (label, ok, detail). Prints one line and fails if any item failed."""
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{lbl} {'ok' if good else 'FAILED'} ({d})" for lbl, good, d in checks)
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    print("\n" + line)
    ACCEPTANCE.append(line)
    assert ok, line


def _study(tmp_path_factory, name, **kw):
    out = tmp_path_factory.mktemp(name)
    return out, run_study(StudyConfig(out=str(out), formats=("csv", "md", "svg"), **kw))


@pytest.fixture(scope="module")
def gl_study(tmp_path_factory):
    return _study(tmp_path_factory, "gl", levels=5, modes=("piola-gl", "standard-iso"))


@pytest.fixture(scope="module")
def affine(tmp_path_factory):
    return _study(tmp_path_factory, "affine", levels=5, modes=("affine",))


@pytest.fixture(scope="module")
def equidistant(tmp_path_factory):
    return _study(tmp_path_factory, "equidistant", levels=5, modes=("piola-eq",))


def _fmt(rates):
    return ", ".join("--" if r is None else f"{r:.3f}" for r in rates)


def test_gauss_lobatto_study(gl_study):
    out, res = gl_study
    t = res.tables["piola-gl"]
    rows = read_table(out / "results.csv")
    r = {c: t.rate(c) for c in ("err_u_l2", "err_u_h1", "err_p_l2")}
    checks = [
        ("L2 rate >= 3.7", r["err_u_l2"] >= 3.7, _fmt(t.rates["err_u_l2"])),
        ("H1 rate >= 2.7", r["err_u_h1"] >= 2.7, _fmt(t.rates["err_u_h1"])),
        ("p rate >= 2.7", r["err_p_l2"] >= 2.7, _fmt(t.rates["err_p_l2"])),
    ]
    lvl = min(range(len(rows)), key=lambda i: abs(rows[i]["h"] - 0.079))
    for col, ref in TARGET_LEVEL3.items():
        v = rows[lvl][col]
        checks.append((f"{col} within 2x of {ref:.3e}", ref / 2 <= v <= 2 * ref,
                       f"level {lvl} h={rows[lvl]['h']:.4f}: {v:.3e}, ratio {v / ref:.3g}"))
    secs = sum(rep.extra["seconds"] for rep in t.reports)
    checks.append(("runtime <= 10 min", secs <= RUNTIME_BUDGET, f"{secs:.0f} s"))
    dofs = rows[-1]["dofs_u"] + rows[-1]["dofs_p"]
    checks.append((f"finest DOFs <= {DOF_BUDGET:.0e}", dofs <= DOF_BUDGET,
                   f"{dofs} at h={rows[-1]['h']:.4f}"))
    report("C1 Gauss-Lobatto convergence (k=3, piola-gl)", checks)


def test_affine_geometry_study(affine):
    _, res = affine
    t = res.tables["affine"]
    report("C2 affine geometry suboptimality", [
        ("H1 rate <= 1.7", t.rate("err_u_h1") <= 1.7, _fmt(t.rates["err_u_h1"])),
        ("L2 rate <= 2.2", t.rate("err_u_l2") <= 2.2, _fmt(t.rates["err_u_l2"])),
    ])


def test_equidistant_study(equidistant):
    _, res = equidistant
    rates = res.tables["piola-eq"].rates["err_u_l2"]
    earlier = [r for r in rates[1:-1] if r is not None]
    report("C3 equidistant rate collapse", [
        ("final L2 rate <= 3.2", rates[-1] <= 3.2, f"{rates[-1]:.3f}"),
        ("all earlier L2 rates >= 3.6", all(r >= 3.6 for r in earlier), _fmt(rates)),
    ])


def test_divergence_comparison(gl_study):
    out, res = gl_study
    gl = res.tables["piola-gl"].reports
    std = res.tables["standard-iso"].reports
    worst = max(r.div_sup / r.grad_norm for r in gl)
    root = ET.parse(out / "divergence.svg").getroot()
    modes = {e.get("data-mode") for e in root.iter() if e.tag.endswith("polyline")}
    report("C4 divergence comparison", [
        ("piola-gl div_sup <= 1e-10 |grad u_h|", worst <= 1e-10, f"max ratio {worst:.2e}"),
        ("standard-iso coarsest div_sup >= 1e-3", std[0].div_sup >= 1e-3, f"{std[0].div_sup:.3e}"),
        ("svg has both polylines", modes == {"piola-gl", "standard-iso"}, ",".join(sorted(modes))),
    ])


def test_viscosity_sweep(tmp_path):
    nus = (1e-7, 1e-6, 1e-3, 1.0)
    res = run_study(StudyConfig(nu_sweep=nus, level=3, out=str(tmp_path), formats=("csv",)))
    rows = read_table(tmp_path / "robustness.csv")
    checks = []
    for col in ("err_u_l2", "err_u_h1"):
        shown = {f"{r[col]:.3e}" for r in rows}
        spread = max(r[col] for r in rows) / min(r[col] for r in rows) - 1
        checks.append((f"{col} equal to 4 digits", len(shown) == 1,
                       f"{'/'.join(sorted(shown))}, spread {spread:.1e}"))
    assert len(res.sweep) == len(nus)
    report("C5 pressure robustness over nu", checks)


def _property_suite():
    checks = []
    worst = 0.0
    for k in range(1, 7):
        r = gauss_lobatto_rule(k)
        worst = max(worst, max(abs(r.weights @ r.nodes ** d - 1 / (d + 1)) for d in range(2 * k)))
    checks.append(("Gauss-Lobatto exact to 2k-1", worst <= 1e-13, f"max err {worst:.1e}"))
    counts = [build_reference_element(k).num_nodes for k in (2, 3, 4)]
    checks.append(("M_k = 10, 19, 31", counts == [10, 19, 31], str(counts)))

    mesh, V, _ = spaces(1)
    T = V.tables(8)
    M = V.reference.num_nodes
    dual = 0.0
    for a in range(2 * M):
        U = np.zeros((mesh.num_elements, M, 2))
        U[:, a // 2, a % 2] = 1.0
        _, _, gu, dv, dt, _ = field_values(mesh.coefficients, T, U, True)
        dual = max(dual, float(np.max(np.abs(dv - dt) / np.abs(gu).max(axis=(1, 2, 3))[:, None])))
    checks.append(("dual divergence formulas agree", dual <= 1e-10, f"{dual:.1e}"))

    rng = np.random.default_rng(11)
    jn = 0.0
    for _ in range(5):
        c = V.expand(rng.standard_normal(V.num_free))
        _, w, v1, v2, n, _, length = edge_traces(V, c)
        j = np.einsum("eqi,ei->eq", v1 - v2, n)
        jn = max(jn, float(np.sum(length[:, None] * w[None] * j ** 2)))
    checks.append(("normal jump <= 1e-20", jn <= 1e-20, f"{jn:.1e}"))

    pou, duality = 0.0, 0.0
    for k in (2, 3, 4):
        ref = build_reference_element(k)
        for x in rng.random((40, 2)) * 0.5:
            pou = max(pou, abs(eval_scalar_basis(ref, x)[0].sum() - 1))
        D = np.array([eval_scalar_basis(ref, a)[0] for a in ref.nodes])
        duality = max(duality, float(np.abs(D - np.eye(ref.num_nodes)).max()))
    checks.append(("partition of unity", pou <= 1e-12, f"{pou:.1e}"))
    checks.append(("nodal duality", duality <= 1e-10, f"{duality:.1e}"))

    mesh0, _, _ = spaces(0)
    fd_worst, step = 0.0, 1e-6
    for e in curved_elements(mesh0)[:8]:
        gm = mesh0.map(e)
        for xh in rng.random((3, 2)) * 0.45 + 0.02:
            dA = geometry_derivatives(gm, xh)
            for m in range(2):
                d = np.zeros(2)
                d[m] = step
                fd = (geometry_eval(gm, xh + d)[3] - geometry_eval(gm, xh - d)[3]) / (2 * step)
                fd_worst = max(fd_worst, float(np.abs(dA[:, :, m] - fd).max()
                                               / max(np.abs(fd).max(), 1e-3)))
    checks.append(("geometry derivative vs FD", fd_worst <= 1e-6, f"rel {fd_worst:.1e}"))
    return checks


def test_property_suite():
    report("C6 property suite", _property_suite())


def _pk_errors(k, level):
    _, V, _ = spaces(level, k, "piola", "gauss-lobatto", "force-affine")

    def u(x):
        X, Y = x[..., 0], x[..., 1]
        return np.stack([X ** k - 2 * X * Y ** (k - 1) + 1, Y ** k + X ** (k - 1) * Y - X], axis=-1)

    def grad(x):
        X, Y = x[..., 0], x[..., 1]
        g = np.empty(x.shape[:-1] + (2, 2))
        g[..., 0, 0] = k * X ** (k - 1) - 2 * Y ** (k - 1)
        g[..., 0, 1] = -2 * (k - 1) * X * Y ** (k - 2)
        g[..., 1, 0] = (k - 1) * X ** (k - 2) * Y - 1
        g[..., 1, 1] = k * Y ** (k - 1) + X ** (k - 1)
        return g

    T = V.tables(10)

    def h1(c):
        x, _, gh, _, _, det = field_values(V.mesh.coefficients, T, V.local(c), True)
        return float(np.sqrt(np.sum(T.W[None] * det * np.sum((gh - grad(x)) ** 2, axis=(-1, -2)))))

    return h1(interpolate(V, u)) / h1(np.zeros(V.num_dofs))


def _oracle_suite():
    checks = []
    worst = max(_pk_errors(k, lvl) for k in (2, 3, 4) for lvl in (0, 1))
    checks.append(("P_k reproduction (broken H1, relative)", worst <= 1e-12, f"{worst:.1e}"))

    rng = np.random.default_rng(5)
    r = 0.9 * np.sqrt(rng.random(20))
    th = 2 * np.pi * rng.random(20)
    x = np.stack([DOMAIN.semi_axis_a * r * np.cos(th), DOMAIN.semi_axis_b * r * np.sin(th)], axis=1)
    h = 1e-5
    lap = np.zeros_like(x)
    gp = np.zeros_like(x)
    for m in range(2):
        e = np.zeros(2)
        e[m] = h
        lap += (EXACT.velocity(x + e) - 2 * EXACT.velocity(x) + EXACT.velocity(x - e)) / h ** 2
        gp[:, m] = (EXACT.pressure(x + e) - EXACT.pressure(x - e)) / (2 * h)
    f = EXACT.source(x)
    rel = float(np.abs(f - (-lap + gp)).max() / np.abs(f).max())
    checks.append(("f vs FD -nu lap u + grad p", rel <= 1e-6, f"rel {rel:.1e}"))

    system, _ = solved(0)
    col = system.B.T @ system.pressure.constant()
    ann = max(abs(col @ v) / np.linalg.norm(v)
              for v in rng.standard_normal((10, system.num_velocity)))
    checks.append(("constant pressure annihilated", ann <= 1e-10, f"{ann:.1e}"))

    beta = [infsup_constant(solved(lvl)[0]) for lvl in range(3)]
    checks.append(("inf-sup levels 0-2 within 2x", min(beta) > 0 and max(beta) <= 2 * min(beta),
                   ", ".join(f"{b:.4f}" for b in beta)))
    return checks


def test_oracle_suite():
    report("C7 oracle suite", _oracle_suite())


def _jump_series(placement):
    out = []
    for level in range(4):
        _, V, _ = spaces(level, placement=placement)
        out.append(edge_jump_norms(interpolate(V, EXACT.velocity), V, moments=True))
    out = np.array(out)
    return out, np.log2(out[:-1] / out[1:])


def test_jump_decay():
    k = 3
    gl, rgl = _jump_series("gauss-lobatto")
    eq, req = _jump_series("equidistant")
    # column 1: sum_e h^-1 int_e |[v.t]|^2; column 2: the same jump tested against P_{k-2}
    report("jump decay, tangential L2 functional", [
        ("GL rate >= 2k-1", rgl[-1, 1] >= 2 * k - 1, _fmt(rgl[:, 1])),
        ("equidistant rate strictly lower", req[-1, 1] < rgl[-1, 1],
         f"{_fmt(req[:, 1])} vs {rgl[-1, 1]:.3f}"),
    ])


def test_jump_decay_moments():
    k = 3
    gl, rgl = _jump_series("gauss-lobatto")
    eq, req = _jump_series("equidistant")
    report("jump decay, moments against P_(k-2)", [
        ("GL rate >= 2k-1", rgl[-1, 2] >= 2 * k - 1, _fmt(rgl[:, 2])),
        ("equidistant rate strictly lower", req[-1, 2] < rgl[-1, 2],
         f"{_fmt(req[:, 2])} vs {rgl[-1, 2]:.3f}"),
        ("GL finer-level value below equidistant", gl[-1, 2] < eq[-1, 2],
         f"{gl[-1, 2]:.2e} vs {eq[-1, 2]:.2e}"),
    ])


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s", "-p", "no:cacheprovider"]))
