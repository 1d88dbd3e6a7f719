"""CSV tables to standalone SVG charts.

Output depends only on the CSV text, so the same table always renders to the
same bytes.  Non-finite values (``-inf`` for a head with all-zero weights)
are parsed but not drawn.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

from .errors import FormatError

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 64, 150, 24, 56


@dataclass
class Table:
    header: list
    labels: list  # first column, verbatim
    values: list  # one list of floats per row, for the remaining columns

    def column(self, j: int) -> list:
        return [row[j] for row in self.values]


def parse_csv(text: str, source: str = "<csv>") -> Table:
    """Parse a header row plus data rows; every cell after the first must be numeric."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise FormatError(f"{source}: line 1: missing header row")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise FormatError(f"{source}: line 1: need at least two columns, got {len(header)}")
    labels, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise FormatError(f"{source}: line {lineno}: expected {len(header)} fields, got {len(row)}")
        vals = []
        for name, cell in zip(header[1:], row[1:]):
            try:
                vals.append(float(cell))
            except ValueError:
                raise FormatError(f"{source}: line {lineno}: column {name!r} is not numeric: {cell!r}") from None
        labels.append(row[0].strip())
        values.append(vals)
    if not values:
        raise FormatError(f"{source}: line 2: no data rows")
    return Table(header, labels, values)


def _n(x: float) -> str:
    return f"{x:.2f}"


def _nice_range(vals):
    finite = [v for v in vals if math.isfinite(v)]
    if not finite:
        return 0.0, 1.0
    lo, hi = min(finite), max(finite)
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _frame(title: str, ylabel: str, xlabel: str, lo: float, hi: float) -> list:
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{_n(LEFT + pw / 2)}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
        f'<text x="{_n(LEFT + pw / 2)}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{_n(TOP + ph / 2)}" text-anchor="middle" '
        f'transform="rotate(-90 14 {_n(TOP + ph / 2)})">{escape(ylabel)}</text>',
    ]
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        y = TOP + ph - ph * k / 4
        out.append(f'<line x1="{LEFT - 4}" y1="{_n(y)}" x2="{LEFT}" y2="{_n(y)}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 6}" y="{_n(y + 4)}" text-anchor="end">{v:.3g}</text>')
    return out


def _legend(names) -> list:
    out = []
    x = WIDTH - RIGHT + 12
    for i, name in enumerate(names):
        y = TOP + 14 + 16 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<rect x="{x}" y="{y - 9}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{x + 14}" y="{y}">{escape(name)}</text>')
    return out


def line_chart(table: Table, title: str = "") -> str:
    """First column is the x axis (numeric); each further column is one series."""
    try:
        xs = [float(v) for v in table.labels]
    except ValueError:
        raise FormatError(f"line chart needs a numeric first column {table.header[0]!r}") from None
    ys = [v for row in table.values for v in row]
    lo, hi = _nice_range(ys)
    x0, x1 = _nice_range(xs)
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    out = _frame(title, "value", table.header[0], lo, hi)

    def px(x, y):
        return LEFT + pw * (x - x0) / (x1 - x0), TOP + ph - ph * (y - lo) / (hi - lo)

    for j, name in enumerate(table.header[1:]):
        color = PALETTE[j % len(PALETTE)]
        pts = [px(x, y) for x, y in zip(xs, table.column(j)) if math.isfinite(y)]
        if len(pts) > 1:
            path = " ".join(f"{_n(a)},{_n(b)}" for a, b in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for a, b in pts:
            out.append(f'<circle cx="{_n(a)}" cy="{_n(b)}" r="2" fill="{color}"/>')
    out += _legend(table.header[1:])
    out.append("</svg>")
    return "\n".join(out) + "\n"


def bar_chart(table: Table, title: str = "") -> str:
    """Grouped bars: one group per value column, one bar per row."""
    ys = [v for row in table.values for v in row if math.isfinite(v)]
    lo, hi = min([0.0, *ys]), max([0.0, *ys]) or 1.0
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM
    out = _frame(title, "value", "", lo, hi)
    groups = table.header[1:]
    gw = pw / len(groups)
    bw = 0.8 * gw / len(table.labels)

    def py(v):
        return TOP + ph - ph * (v - lo) / (hi - lo)

    for g, name in enumerate(groups):
        gx = LEFT + g * gw + 0.1 * gw
        out.append(f'<text x="{_n(LEFT + (g + 0.5) * gw)}" y="{TOP + ph + 16}" text-anchor="middle">'
                   f'{escape(name)}</text>')
        for r in range(len(table.labels)):
            v = table.values[r][g]
            if not math.isfinite(v):
                continue
            top, base = py(max(v, 0.0)), py(min(v, 0.0))
            out.append(f'<rect x="{_n(gx + r * bw)}" y="{_n(top)}" width="{_n(bw)}" height="{_n(base - top)}" '
                       f'fill="{PALETTE[r % len(PALETTE)]}"/>')
    out += _legend(table.labels)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render(text: str, kind: str = "line", title: str = "", source: str = "<csv>") -> str:
    table = parse_csv(text, source)
    if kind == "line":
        return line_chart(table, title)
    if kind == "bar":
        return bar_chart(table, title)
    raise FormatError(f"unknown chart kind {kind!r}; expected 'line' or 'bar'")


def render_file(csv_path, svg_path, kind: str = "line", title: str = "") -> None:
    with open(csv_path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    svg = render(text, kind, title, source=str(csv_path))
    with open(svg_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
