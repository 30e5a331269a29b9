"""Deterministic file output: CSV with commented headers, JSON summaries, minimal SVG.

Every file is written to a temporary name in the target directory and
renamed into place, so readers never see partial output.  Floats are
written with ``repr`` so values round-trip exactly.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from .table import Table


def atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def fmt(v) -> str:
    """Exact text form of a scalar; NaN becomes an empty cell."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    f = float(v)
    if math.isnan(f):
        return ""
    return repr(f)


def jsonable(obj):
    """Convert numpy containers and non-finite floats to plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        if math.isnan(f):
            return None
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    return obj


def _header_lines(comments: dict) -> list[str]:
    return [f"# {k}: {v}" for k, v in comments.items()]


def table_csv(table: Table, config_hash: str, extra: dict | None = None) -> str:
    buf = io.StringIO()
    comments = {"columns": ",".join(table.names),
                "units": ",".join(table.units.get(n, "1") for n in table.names),
                "config_hash": config_hash}
    comments.update(extra or {})
    for line in _header_lines(comments):
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.names)
    for row in table.rows():
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def matrix_csv(matrix: np.ndarray, row_name: str, row_axis, col_name: str, col_axis,
               value_name: str, units: dict, config_hash: str) -> str:
    """2-D array as CSV: first column is the row axis, the column axis sits in a comment."""
    buf = io.StringIO()
    comments = {
        "rows": f"{row_name} [{units.get(row_name, '1')}]",
        "columns": f"{col_name} [{units.get(col_name, '1')}]",
        "values": f"{value_name} [{units.get(value_name, '1')}]",
        f"{row_name}_axis": " ".join(fmt(v) for v in row_axis),
        f"{col_name}_axis": " ".join(fmt(v) for v in col_axis),
        "config_hash": config_hash,
    }
    for line in _header_lines(comments):
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([row_name] + [f"{col_name}={fmt(c)}" for c in col_axis])
    for r, row in zip(row_axis, matrix):
        w.writerow([fmt(r)] + [fmt(v) for v in row])
    return buf.getvalue()


def read_csv(path: Path) -> dict[str, np.ndarray]:
    """Read a (possibly commented) CSV into float columns; empty cells become NaN."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    rows = list(csv.reader(lines))
    if not rows:
        raise ValueError(f"{path}: no header row")
    header = [h.strip() for h in rows[0]]
    data = rows[1:]
    cols = {}
    for k, name in enumerate(header):
        try:
            cols[name] = np.array([float(r[k]) if r[k].strip() else math.nan for r in data])
        except (ValueError, IndexError):
            raise ValueError(f"{path}: column {name!r} has a non-numeric or missing entry") from None
    return cols


def summary_json(payload: dict) -> str:
    return json.dumps(jsonable(payload), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# SVG

W, H, PAD = 640, 420, 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _scale(v, lo, hi, a, b):
    if hi == lo:
        return (a + b) / 2
    return a + (v - lo) * (b - a) / (hi - lo)


def line_svg(x, series: dict[str, Sequence[float]], xlabel: str, ylabel: str, title: str = "") -> str:
    """Polyline plot; NaN points break the line."""
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()] + [np.zeros(0)])
    y_lo, y_hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    x_lo, x_hi = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}">',
           f"<title>{title}</title>",
           f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>',
           f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle">{xlabel} [{x_lo!r}, {x_hi!r}]</text>',
           f'<text x="12" y="{H / 2}" transform="rotate(-90 12 {H / 2})" text-anchor="middle">'
           f"{ylabel} [{y_lo!r}, {y_hi!r}]</text>"]
    for k, (name, y) in enumerate(ys.items()):
        color = PALETTE[k % len(PALETTE)]
        segs, cur = [], []
        for xi, yi in zip(x, y):
            if np.isfinite(yi):
                px = _scale(xi, x_lo, x_hi, PAD, W - PAD)
                py = _scale(yi, y_lo, y_hi, H - PAD, PAD)
                cur.append(f"{px:.2f},{py:.2f}")
            elif cur:
                segs.append(cur)
                cur = []
        if cur:
            segs.append(cur)
        for s in segs:
            out.append(f'<polyline fill="none" stroke="{color}" points="{" ".join(s)}"/>')
        out.append(f'<text x="{W - PAD + 4}" y="{PAD + 16 * (k + 1)}" fill="{color}" font-size="11">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _color(v, lo, hi) -> str:
    t = 0.0 if hi == lo else (v - lo) / (hi - lo)
    r = int(round(255 * t))
    b = int(round(255 * (1 - t)))
    return f"#{r:02x}40{b:02x}"


def heatmap_svg(matrix: np.ndarray, xlabel: str, ylabel: str, title: str = "") -> str:
    """Colour-mapped rectangles; each cell carries its exact value in ``data-value``."""
    m = np.asarray(matrix, dtype=float)
    finite = m[np.isfinite(m)]
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 0.0)
    rows, cols = m.shape if m.ndim == 2 else (0, 0)
    cw = (W - 2 * PAD) / max(cols, 1)
    ch = (H - 2 * PAD) / max(rows, 1)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" '
           f'data-min="{fmt(lo)}" data-max="{fmt(hi)}">',
           f"<title>{title}</title>",
           f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle">{xlabel}</text>',
           f'<text x="12" y="{H / 2}" transform="rotate(-90 12 {H / 2})" text-anchor="middle">{ylabel}</text>']
    for i in range(rows):
        for j in range(cols):
            v = m[i, j]
            fill = _color(v, lo, hi) if np.isfinite(v) else "#ffffff"
            # first row at the bottom
            y = H - PAD - (i + 1) * ch
            out.append(f'<rect x="{PAD + j * cw:.2f}" y="{y:.2f}" width="{cw:.2f}" height="{ch:.2f}" '
                       f'fill="{fill}" data-value="{fmt(v)}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


class Emitter:
    """Writes the files of one subcommand run as ``<subcommand>-<hash>[-<part>].<ext>``."""

    def __init__(self, out_dir: Path, subcommand: str, config_hash: str):
        self.out_dir = Path(out_dir)
        self.stem = f"{subcommand}-{config_hash}"
        self.config_hash = config_hash
        self.written: list[Path] = []

    def path(self, ext: str, part: str | None = None) -> Path:
        name = self.stem + (f"-{part}" if part else "") + f".{ext}"
        return self.out_dir / name

    def write(self, ext: str, text: str, part: str | None = None) -> Path:
        p = atomic_write(self.path(ext, part), text)
        self.written.append(p)
        return p

    def table(self, table: Table, part: str | None = None, extra: dict | None = None) -> Path:
        return self.write("csv", table_csv(table, self.config_hash, extra), part)
