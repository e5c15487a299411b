"""
Writers for CSV, legacy VTK, SVG and JSON outputs.

Every float is written with ``repr``, which gives the shortest decimal that
round-trips, so identical inputs produce identical bytes on any platform.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .mesh import BoundaryRegion, Mesh


def fmt(x) -> str:
    """Shortest round-trip text for a number."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv_cell(x) -> str:
    s = fmt(x)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def region_rows(region: BoundaryRegion):
    return [(a, b) for a, b in region.arcs()]


def write_region_csv(path, region: BoundaryRegion) -> Path:
    return write_csv(path, ("s_begin", "s_end"), region_rows(region))


def write_solution_csv(path, mesh: Mesh, u) -> Path:
    u = np.asarray(u, dtype=float)
    rows = ((i, x, y, ui) for i, ((x, y), ui) in enumerate(zip(mesh.vertices, u)))
    return write_csv(path, ("vertex_id", "x", "y", "u"), rows)


def write_boundary_csv(path, s, f, u) -> Path:
    return write_csv(path, ("s", "f", "u"), zip(s, f, u))


def write_trace_csv(path, trace) -> Path:
    rows = ((st.iteration, st.J, st.threshold_s, st.measure, st.residual) for st in trace.steps)
    return write_csv(path, ("iter", "J", "threshold_s", "measure", "residual"), rows)


def write_load_csv(path, values) -> Path:
    return write_csv(path, ("edge_id", "f"), enumerate(np.asarray(values, dtype=float)))


def write_extremal_csv(path, v) -> Path:
    return write_csv(path, ("vertex_id", "v"), enumerate(np.asarray(v, dtype=float)))


def write_derivative_csv(path, report) -> Path:
    rows = ((e.t, e.fd_dJ, report.formula_dJ, e.fd_dA, report.formula_dA) for e in report.entries)
    return write_csv(path, ("t", "fd_dJ", "formula_dJ", "fd_dA", "formula_dA"), rows)


def write_oracle_csv(path, rows) -> Path:
    return write_csv(path, ("config_id", "description", "J"),
                     ((r.config_id, r.description, r.J) for r in rows))


def write_compare_csv(path, rows) -> Path:
    return write_csv(path, ("n_refine", "J_fem", "J_oracle", "abs_err"), rows)


def write_vtk(path, mesh: Mesh, u=None, title: str = "membrane") -> Path:
    """Legacy ASCII unstructured grid with triangles and an optional nodal scalar ``u``."""
    path = Path(path)
    nv, nt = mesh.n_vertices, mesh.n_triangles
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {nv} double"]
    out += [f"{fmt(x)} {fmt(y)} 0.0" for x, y in mesh.vertices]
    out.append(f"CELLS {nt} {4 * nt}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"CELL_TYPES {nt}")
    out += ["5"] * nt
    if u is not None:
        u = np.asarray(u, dtype=float)
        if u.shape != (nv,):
            raise ValueError("u must have one value per vertex")
        out += [f"POINT_DATA {nv}", "SCALARS u double 1", "LOOKUP_TABLE default"]
        out += [fmt(x) for x in u]
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return path


def to_jsonable(obj):
    """Recursively convert numpy containers and non-finite floats for JSON."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj, indent: int | None = 2) -> str:
    return json.dumps(to_jsonable(obj), indent=indent, sort_keys=True, allow_nan=False)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(dumps(obj) + "\n", encoding="utf-8")
    return path


# --- SVG -----------------------------------------------------------------

_W, _H, _M = 480, 320, 50
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _nice_range(values, log: bool):
    v = np.asarray([x for x in values if math.isfinite(x) and (x > 0 or not log)], dtype=float)
    if v.size == 0:
        return (0.0, 1.0)
    if log:
        v = np.log10(v)
    lo, hi = float(v.min()), float(v.max())
    if hi - lo < 1e-12 * max(1.0, abs(hi)):
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def svg_plot(series, title: str = "", xlabel: str = "", ylabel: str = "",
             logx: bool = False, logy: bool = False) -> str:
    """Line plot as a standalone SVG document.

    ``series`` is a list of ``(label, x, y)``; an empty list, or series with
    no points, still yields a valid document with axes.
    """
    xs = [x for _, sx, _ in series for x in sx]
    ys = [y for _, _, sy in series for y in sy]
    x0, x1 = _nice_range(xs, logx)
    y0, y1 = _nice_range(ys, logy)

    def px(x):
        x = math.log10(x) if logx else x
        return _M + (x - x0) / (x1 - x0) * (_W - 2 * _M)

    def py(y):
        y = math.log10(y) if logy else y
        return _H - _M - (y - y0) / (y1 - y0) * (_H - 2 * _M)

    def ok(x, y):
        return (math.isfinite(x) and math.isfinite(y)
                and (x > 0 or not logx) and (y > 0 or not logy))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}">',
           f'<rect width="{_W}" height="{_H}" fill="white"/>',
           f'<line x1="{_M}" y1="{_H - _M}" x2="{_W - _M}" y2="{_H - _M}" stroke="black"/>',
           f'<line x1="{_M}" y1="{_M}" x2="{_M}" y2="{_H - _M}" stroke="black"/>',
           f'<text x="{_W / 2}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>',
           f'<text x="{_W / 2}" y="{_H - 10}" text-anchor="middle" font-size="12">{_esc(xlabel)}</text>',
           f'<text x="15" y="{_H / 2}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 15 {_H / 2})">{_esc(ylabel)}</text>']
    for lo, hi, anchor in ((x0, x1, "x"), (y0, y1, "y")):
        log = logx if anchor == "x" else logy
        for frac in (0.0, 0.5, 1.0):
            v = lo + frac * (hi - lo)
            label = f"{10 ** v:.3g}" if log else f"{v:.3g}"
            if anchor == "x":
                X = _M + frac * (_W - 2 * _M)
                out.append(f'<text x="{X:.2f}" y="{_H - _M + 15}" text-anchor="middle" font-size="10">{label}</text>')
            else:
                Y = _H - _M - frac * (_H - 2 * _M)
                out.append(f'<text x="{_M - 5}" y="{Y:.2f}" text-anchor="end" font-size="10">{label}</text>')
    for k, (label, sx, sy) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        pts = [f"{px(x):.2f},{py(y):.2f}" for x, y in zip(sx, sy) if ok(x, y)]
        if pts:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        out.append(f'<text x="{_W - _M}" y="{_M + 14 * k}" text-anchor="end" font-size="11" '
                   f'fill="{color}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_svg(path, *args, **kwargs) -> Path:
    path = Path(path)
    path.write_text(svg_plot(*args, **kwargs), encoding="utf-8")
    return path


def plot_trace(path, trace) -> Path:
    it = [st.iteration for st in trace.steps] if trace is not None else []
    J = [st.J for st in trace.steps] if trace is not None else []
    return write_svg(path, [("J", it, J)], "ascent", "iteration", "J")


def plot_boundary(path, s, f, u) -> Path:
    return write_svg(path, [("u", s, u), ("f", s, f)], "boundary trace", "s", "value")


def plot_derivative(path, report) -> Path:
    t = [e.t for e in report.entries]
    gaps = list(report.gaps)
    ref = [gaps[0] * (x / t[0]) for x in t] if t and gaps and gaps[0] > 0 else []
    return write_svg(path, [("|fd - formula|", t, gaps), ("order 1", t[:len(ref)], ref)],
                     "finite differences vs formula", "t", "gap", logx=True, logy=True)
