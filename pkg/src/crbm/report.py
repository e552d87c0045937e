"""CSV tables with a schema-version header and log-scale SVG line plots."""

from __future__ import annotations

import csv
import io
import math
from datetime import datetime, timezone
from pathlib import Path
from xml.sax.saxutils import escape

SCHEMA_VERSION = 1
TIMESTAMP_PREFIX = "# generated "

# Column order is fixed per schema version.
SCHEMAS = {
    "hf_summary": ("mu", "friction", "n_dof", "k_cv", "outer_iterations", "converged", "e_AC_n", "e_AC_ntau",
                   "max_gap_violation", "energy"),
    "online": ("mu", "N", "k_cv", "converged", "t_coefficients", "t_reduced_solve", "t_reconstruction"),
    "pod": ("N", "e_POD"),
    "eim": ("family", "S", "e_train", "e_valid", "e_converged"),
    "rb_rows": ("mu", "N", "eim_ok", "eim_iters", "eim_e_u", "eim_e_nn", "eim_e_ntau",
                "naive_ok", "naive_iters", "naive_e_u", "naive_e_nn", "naive_e_ntau"),
    "rb_max": ("N", "eim_failures", "eim_e_u_max", "eim_e_nn_max", "eim_e_ntau_max",
               "naive_failures", "naive_e_u_max", "naive_e_nn_max", "naive_e_ntau_max"),
    "study": ("metric", "mu", "h", "error", "iterations", "order"),
    "mesh": ("h_target", "n_nodes", "n_triangles", "n_contact_edges", "n_contact_nodes", "n_dof"),
}


def format_value(v) -> str:
    """Shortest round-trip text for floats; plain text otherwise."""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float) or type(v).__name__.startswith("float"):
        v = float(v)
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def csv_text(schema: str, rows, timestamp: bool = True) -> str:
    """Rows are mappings; missing keys are written as empty fields."""
    columns = SCHEMAS[schema]
    buf = io.StringIO()
    buf.write(f"# crbm-csv schema={schema} version={SCHEMA_VERSION}\n")
    if timestamp:
        buf.write(f"{TIMESTAMP_PREFIX}{datetime.now(timezone.utc).isoformat(timespec='seconds')}\n")
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row[c]) if c in row and row[c] is not None else "" for c in columns])
    return buf.getvalue()


def write_csv(path: str | Path, schema: str, rows, timestamp: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(schema, rows, timestamp))
    return path


def read_csv(path: str | Path) -> tuple[dict, list[dict]]:
    """Header metadata and data rows (as strings); comment lines only precede the column header."""
    text = Path(path).read_text()
    meta = {}
    pos = 0
    while text.startswith("#", pos):
        end = text.find("\n", pos)
        end = len(text) if end < 0 else end + 1
        line = text[pos:end].strip()
        if line.startswith("# crbm-csv"):
            meta = dict(item.split("=", 1) for item in line[2:].split()[1:])
        pos = end
    rows = list(csv.DictReader(io.StringIO(text[pos:], newline="")))
    return meta, rows


def strip_timestamp(text: str) -> str:
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith(TIMESTAMP_PREFIX))


# -- SVG ------------------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_log_plot(series: dict[str, tuple[list[float], list[float]]], title: str = "", xlabel: str = "",
                 ylabel: str = "", width: int = 640, height: int = 420) -> str:
    """SVG 1.1 line plot with linear x and log10 y; non-positive or non-finite points are skipped."""
    pts = {name: [(float(x), float(y)) for x, y in zip(xs, ys) if math.isfinite(y) and y > 0]
           for name, (xs, ys) in series.items()}
    allp = [p for v in pts.values() for p in v]
    left, right, top, bottom = 70, 20, 40, 50
    if allp:
        x0, x1 = min(p[0] for p in allp), max(p[0] for p in allp)
        e0 = math.floor(math.log10(min(p[1] for p in allp)))
        e1 = math.ceil(math.log10(max(p[1] for p in allp)))
    else:
        x0, x1, e0, e1 = 0.0, 1.0, -1, 0
    if x1 == x0:
        x1 = x0 + 1.0
    if e1 == e0:
        e1 = e0 + 1
    pw, ph = width - left - right, height - top - bottom

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (e1 - math.log10(y)) / (e1 - e0) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for e in range(e0, e1 + 1):
        y = sy(10.0**e)
        out.append(f'<line x1="{left}" y1="{y:.2f}" x2="{left + pw}" y2="{y:.2f}" stroke="#dddddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" font-size="11" text-anchor="end">1e{e}</text>')
    for i in range(6):
        x = x0 + (x1 - x0) * i / 5
        out.append(f'<text x="{sx(x):.2f}" y="{top + ph + 16}" font-size="11" text-anchor="middle">{x:.4g}</text>')
    out.append(f'<text x="{width / 2:.1f}" y="22" font-size="14" text-anchor="middle">{escape(title)}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" font-size="12" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (name, p) in enumerate(pts.items()):
        color = _COLORS[i % len(_COLORS)]
        if p:
            coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in p)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = top + 14 + 16 * i
        out.append(f'<line x1="{left + pw - 150}" y1="{ly}" x2="{left + pw - 130}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 125}" y="{ly + 4}" font-size="11">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path: str | Path, *args, **kwargs) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(svg_log_plot(*args, **kwargs))
    return path
