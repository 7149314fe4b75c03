"""Time the numba and numpy element kernels on the same curved mesh.

    python benchmarks/bench_kernels.py --level 3 --degree 3 --repeat 3

The numba path is warmed up once before timing; both paths must agree.
"""
import argparse
import time

import numpy as np

from svpiola import build_geometry_maps, build_spaces, exact_fields, generate_ellipse_mesh
from svpiola.geometry import SmoothDomain
from svpiola.kernels import USE_NUMBA, element_matrices, field_values


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--degree", type=int, default=3)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if not USE_NUMBA:
        raise SystemExit("numba is disabled (SVPIOLA_NUMBA=0); nothing to compare")

    dom = SmoothDomain()
    k = args.degree
    mesh = build_geometry_maps(generate_ellipse_mesh(dom, args.level), k)
    V, _ = build_spaces(mesh, k)
    T = V.tables(2 * k + 2)
    X = mesh.coefficients
    FN = exact_fields(dom).source(V.node_coords)[V.element_nodes]
    U = np.random.default_rng(0).standard_normal((mesh.num_elements, V.reference.num_nodes, 2))
    print(f"level {args.level}, k={k}: {mesh.num_elements} elements, {len(T.W)} points per element")

    rows = []
    for name, call in [
        ("element_matrices", lambda nb: element_matrices(X, T, 1.0, True, FN, use_numba=nb)),
        ("field_values", lambda nb: field_values(X, T, U, True, use_numba=nb)),
    ]:
        call(True)  # compile
        t_nb, out_nb = best_of(lambda: call(True), args.repeat)
        t_np, out_np = best_of(lambda: call(False), args.repeat)
        diff = max(float(np.max(np.abs(a - b)) / max(1.0, float(np.max(np.abs(b)))))
                   for a, b in zip(out_nb, out_np) if np.ndim(a))
        rows.append((name, t_nb, t_np, t_np / t_nb, diff))

    print(f"{'kernel':<18}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'rel diff':>12}")
    for name, a, b, s, d in rows:
        print(f"{name:<18}{a:>12.4f}{b:>12.4f}{s:>10.2f}{d:>12.2e}")


if __name__ == "__main__":
    main()
