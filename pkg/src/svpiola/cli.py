"""Command-line driver for convergence and viscosity-robustness studies."""
import argparse
import csv
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .analysis import compute_rates, edge_jump_norms, error_norms
from .errors import (ConfigError, ConstructionError, DomainError, GeometryError,
                     ProjectionError, SolverError)
from .geometry import SmoothDomain, exact_fields
from .mesh import build_geometry_maps, generate_ellipse_mesh
from .spaces import build_spaces
from .system import assemble, dump_system, interpolate_source, solve

__all__ = ["StudyConfig", "StudyResult", "MODES", "run_study", "emit_tables", "emit_svg", "main"]

log = logging.getLogger("svpiola")

# mode -> (geometry mode, velocity transform, edge placement)
MODES = {
    "piola-gl": ("curved", "piola", "gauss-lobatto"),
    "piola-eq": ("curved", "piola", "equidistant"),
    "standard-iso": ("curved", "standard-isoparametric", "gauss-lobatto"),
    "affine": ("force-affine", "piola", "gauss-lobatto"),
}
CSV_COLUMNS = ["level", "h", "dofs_u", "dofs_p", "err_u_l2", "rate_u_l2", "err_u_h1",
               "rate_u_h1", "err_p_l2", "rate_p_l2", "div_sup"]
SWEEP_COLUMNS = ["nu", "level", "h", "dofs_u", "dofs_p", "err_u_l2", "err_u_h1", "err_p_l2", "div_sup"]
FORMATS = ("csv", "md", "svg")


@dataclass
class StudyConfig:
    degree: int = 3
    levels: int = 5
    modes: tuple = ("piola-gl",)
    nu: float = 1.0
    nu_sweep: tuple = ()
    level: int = 3
    axes: tuple = (1.5, 1.0)
    out: str = "results"
    formats: tuple = FORMATS
    dump_system: bool = False
    geometry_interior: str = "blend"
    solver: str = "condensed"

    def validate(self):
        if not 2 <= self.degree <= 6:
            raise ConfigError(f"degree must be in [2, 6], got {self.degree}")
        if not 1 <= self.levels <= 7:
            raise ConfigError(f"levels must be in [1, 7], got {self.levels}")
        if not 0 <= self.level <= 6:
            raise ConfigError(f"level must be in [0, 6], got {self.level}")
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"unknown mode {m!r}; choose from {', '.join(MODES)}")
        if not self.modes:
            raise ConfigError("at least one mode is required")
        if not (self.nu > 0 and all(v > 0 for v in self.nu_sweep)):
            raise ConfigError("viscosities must be positive")
        if len(self.axes) != 2 or min(self.axes) <= 0:
            raise ConfigError("axes must be two positive numbers a,b")
        for f in self.formats:
            if f not in FORMATS:
                raise ConfigError(f"unknown format {f!r}")
        if self.geometry_interior not in ("affine", "blend"):
            raise ConfigError("geometry-interior must be 'affine' or 'blend'")
        if self.solver not in ("condensed", "direct"):
            raise ConfigError("solver must be 'condensed' or 'direct'")
        return self


@dataclass
class StudyResult:
    status: int
    files: list
    tables: dict = field(default_factory=dict)
    sweep: list = field(default_factory=list)


def _solve_level(config, mode, level, nu, exact, domain):
    geo_mode, transform, placement = MODES[mode]
    k = config.degree
    t0 = time.perf_counter()
    affine = generate_ellipse_mesh(domain, level)
    mesh = build_geometry_maps(affine, k, geo_mode, config.geometry_interior)
    V, Q = build_spaces(mesh, k, transform, placement)
    # the mode string fixes transform and placement; make sure construction agrees
    assert (V.piola, V.edge_placement, mesh.mode) == (transform == "piola", placement, geo_mode)
    fh = interpolate_source(exact.source, V)
    system = assemble(V, Q, nu, fh)
    if config.dump_system:
        dump_system(system, os.path.join(config.out, f"system-{mode}-L{level}-nu{nu:g}"))
    sol = solve(system, method=config.solver)
    rep = error_norms(sol, exact, level=level)
    rep.normal_jump, rep.tangential_jump = edge_jump_norms(sol.u, V)
    rep.extra["det_range"] = mesh.det_range
    rep.extra["seconds"] = time.perf_counter() - t0
    return rep


def run_study(config: StudyConfig) -> StudyResult:
    config.validate()
    os.makedirs(config.out, exist_ok=True)
    domain = SmoothDomain(*config.axes)
    files = []
    if config.nu_sweep:
        mode = config.modes[0]
        rows = []
        for nu in config.nu_sweep:
            t0 = time.perf_counter()
            rep = _solve_level(config, mode, config.level, nu, exact_fields(domain, nu), domain)
            rows.append((nu, rep))
            log.info("nu=%g level=%d err_u_l2=%.4e err_u_h1=%.4e (%.1fs)", nu, config.level,
                     rep.err_u_l2, rep.err_u_h1, time.perf_counter() - t0)
        files += emit_sweep(rows, config.formats, config.out)
        return StudyResult(0, files, sweep=rows)

    exact = exact_fields(domain, config.nu)
    tables = {}
    for mode in config.modes:
        reports = []
        for level in range(config.levels):
            t0 = time.perf_counter()
            rep = _solve_level(config, mode, level, config.nu, exact, domain)
            reports.append(rep)
            log.info("%s level=%d h=%.4f dofs=%d err_u_l2=%.4e err_u_h1=%.4e err_p_l2=%.4e "
                     "div_sup=%.2e (%.1fs)", mode, level, rep.h, rep.dofs_u + rep.dofs_p,
                     rep.err_u_l2, rep.err_u_h1, rep.err_p_l2, rep.div_sup,
                     time.perf_counter() - t0)
        tables[mode] = compute_rates(reports)
    first = config.modes[0]
    fmts = [f for f in config.formats if f != "svg"]
    files += emit_tables(tables[first].reports, fmts, config.out, "results")
    if len(config.modes) > 1:
        for mode in config.modes:
            files += emit_tables(tables[mode].reports, fmts, config.out, f"results-{mode}")
    if "svg" in config.formats:
        path = os.path.join(config.out, "divergence.svg")
        emit_svg({m: [r.div_sup for r in t.reports] for m, t in tables.items()}, path)
        files.append(path)
    return StudyResult(0, files, tables)


def _rows(reports):
    table = compute_rates(reports)
    out = []
    for i, r in enumerate(reports):
        out.append({
            "level": r.level, "h": r.h, "dofs_u": r.dofs_u, "dofs_p": r.dofs_p,
            "err_u_l2": r.err_u_l2, "rate_u_l2": table.rates["err_u_l2"][i],
            "err_u_h1": r.err_u_h1, "rate_u_h1": table.rates["err_u_h1"][i],
            "err_p_l2": r.err_p_l2, "rate_p_l2": table.rates["err_p_l2"][i],
            "div_sup": r.div_sup,
        })
    return out


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % v


def _md_cell(col, v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if col.startswith("err") or col == "div_sup" or col == "nu":
        return "%.3e" % v
    return "%.4g" % v


def _write(path, rows, columns, fmt):
    with open(path, "w", newline="") as fh:
        if fmt == "csv":
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_csv_cell(r[c]) for c in columns])
        else:
            fh.write("| " + " | ".join(columns) + " |\n")
            fh.write("|" + "|".join("---" for _ in columns) + "|\n")
            for r in rows:
                fh.write("| " + " | ".join(_md_cell(c, r[c]) for c in columns) + " |\n")
    return path


def emit_tables(reports, formats, out=".", name="results"):
    """Write the convergence table as CSV (17 digits) and/or Markdown (4 digits)."""
    if not reports:
        raise ValueError("emit_tables needs at least one report")
    rows = _rows(reports)
    files = []
    for fmt in formats:
        if fmt in ("csv", "md"):
            files.append(_write(os.path.join(out, f"{name}.{fmt}"), rows, CSV_COLUMNS, fmt))
    return files


def emit_sweep(rows, formats, out=".", name="robustness"):
    data = [{"nu": nu, "level": r.level, "h": r.h, "dofs_u": r.dofs_u, "dofs_p": r.dofs_p,
             "err_u_l2": r.err_u_l2, "err_u_h1": r.err_u_h1, "err_p_l2": r.err_p_l2,
             "div_sup": r.div_sup} for nu, r in rows]
    return [_write(os.path.join(out, f"{name}.{fmt}"), data, SWEEP_COLUMNS, fmt)
            for fmt in formats if fmt in ("csv", "md")]


def read_table(path):
    """Parse a results CSV back into a list of dicts of floats/ints/None."""
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        d = {}
        for c, v in r.items():
            if v == "":
                d[c] = None
            elif c in ("level", "dofs_u", "dofs_p"):
                d[c] = int(v)
            else:
                d[c] = float(v)
        out.append(d)
    return out


_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]


def emit_svg(series, path, width=640, height=420):
    """Log-scale line chart of div_sup against mesh level, one polyline per mode."""
    ml, mr, mt, mb = 80, 170, 30, 50
    pw, ph = width - ml - mr, height - mt - mb
    vals = [v for ys in series.values() for v in ys if v > 0]
    lo = math.floor(math.log10(min(vals))) if vals else -16
    hi = math.ceil(math.log10(max(vals))) if vals else 0
    if hi <= lo:
        hi = lo + 1
    nlev = max(len(ys) for ys in series.values())

    def px(i):
        return ml + (pw * i / (nlev - 1) if nlev > 1 else pw / 2)

    def py(v):
        v = max(v, 10.0 ** lo)
        return mt + ph * (hi - math.log10(v)) / (hi - lo)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
             '<rect width="100%" height="100%" fill="white"/>',
             f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
             f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>']
    step = max(1, (hi - lo) // 8)
    for e in range(lo, hi + 1, step):
        y = py(10.0 ** e)
        parts.append(f'<line x1="{ml - 4}" y1="{y:.1f}" x2="{ml + pw}" y2="{y:.1f}" '
                     'stroke="#ddd"/>')
        parts.append(f'<text x="{ml - 8}" y="{y + 4:.1f}" text-anchor="end">1e{e}</text>')
    for i in range(nlev):
        parts.append(f'<text x="{px(i):.1f}" y="{mt + ph + 18}" text-anchor="middle">{i}</text>')
    parts.append(f'<text x="{ml + pw / 2}" y="{height - 10}" text-anchor="middle">mesh level</text>')
    parts.append(f'<text x="18" y="{mt + ph / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 18 {mt + ph / 2})">max |div u_h|</text>')
    for n, (mode, ys) in enumerate(series.items()):
        color = _COLORS[n % len(_COLORS)]
        pts = " ".join(f"{px(i):.1f},{py(v):.1f}" for i, v in enumerate(ys))
        parts.append(f'<polyline class="series" data-mode="{mode}" fill="none" stroke="{color}" '
                     f'stroke-width="2" points="{pts}"/>')
        ly = mt + 20 * n + 10
        parts.append(f'<line x1="{ml + pw + 15}" y1="{ly}" x2="{ml + pw + 40}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{ml + pw + 45}" y="{ly + 4}">{mode}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    return path


def _floats(text, name):
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated numbers, got {text!r}") from None


def _words(text):
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _bool(text):
    return str(text).strip().lower() in ("1", "true", "yes", "on")


_KEYS = {
    "degree": ("degree", int),
    "levels": ("levels", int),
    "level": ("level", int),
    "mode": ("modes", _words),
    "nu": ("nu", float),
    "nu-sweep": ("nu_sweep", lambda s: _floats(s, "nu-sweep")),
    "axes": ("axes", lambda s: _floats(s, "axes")),
    "out": ("out", str),
    "formats": ("formats", _words),
    "dump-system": ("dump_system", _bool),
    "geometry-interior": ("geometry_interior", str),
    "solver": ("solver", str),
}


def read_config(path):
    """Flat ``key = value`` file; '#' starts a comment."""
    values = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key not in _KEYS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        values[key] = val
    return values


def build_parser():
    p = argparse.ArgumentParser(
        prog="svpiola",
        description="Divergence-free isoparametric Scott-Vogelius studies on an ellipse.")
    p.add_argument("--degree", help="polynomial degree k (default 3)")
    p.add_argument("--levels", help="number of mesh levels (default 5)")
    p.add_argument("--level", help="mesh level for --nu-sweep (default 3)")
    p.add_argument("--mode", help="comma list of piola-gl, piola-eq, standard-iso, affine")
    p.add_argument("--nu", help="viscosity (default 1)")
    p.add_argument("--nu-sweep", help="comma list of viscosities; runs the robustness table")
    p.add_argument("--axes", help="ellipse semi-axes a,b (default 1.5,1)")
    p.add_argument("--out", help="output directory (default ./results)")
    p.add_argument("--formats", help="comma list of csv, md, svg")
    p.add_argument("--dump-system", action="store_const", const="1",
                   help="write A, B, m, rhs in Matrix Market format per level")
    p.add_argument("--config", help="key=value file; flags take precedence")
    p.add_argument("--geometry-interior", help="interior geometry nodes: blend (default) or affine")
    p.add_argument("--solver", help="condensed (default) or direct")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def config_from_args(argv=None) -> StudyConfig:
    args = build_parser().parse_args(argv)
    values = read_config(args.config) if args.config else {}
    for key in _KEYS:
        v = getattr(args, key.replace("-", "_"))
        if v is not None:
            values[key] = v
    cfg = StudyConfig()
    for key, raw in values.items():
        attr, conv = _KEYS[key]
        try:
            cfg = replace(cfg, **{attr: conv(raw)})
        except ValueError:
            raise ConfigError(f"invalid value for {key}: {raw!r}") from None
    return cfg.validate(), args


def main(argv=None):
    try:
        cfg, args = config_from_args(argv)
    except ConfigError as exc:
        print(f"svpiola: config error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        res = run_study(cfg)
    except ConfigError as exc:
        print(f"svpiola: config error: {exc}", file=sys.stderr)
        return 2
    except (GeometryError, ProjectionError, DomainError) as exc:
        where = f" (element {exc.element})" if getattr(exc, "element", None) is not None else ""
        print(f"svpiola: geometry error{where}: {exc}", file=sys.stderr)
        return 3
    except (SolverError, ConstructionError) as exc:
        print(f"svpiola: solver error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"svpiola: I/O error: {exc}", file=sys.stderr)
        return 2
    for f in res.files:
        print(f)
    return res.status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
