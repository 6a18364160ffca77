"""Minimal deterministic SVG line plots of CSV columns."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=30, bottom=50)
COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


class PlotError(ValueError):
    pass


@dataclass
class PlotSpec:
    x: str
    y: list
    title: str = ""
    xlabel: str | None = None
    ylabel: str = ""
    logy: bool = False
    labels: dict = field(default_factory=dict)


def read_csv_columns(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return {}
        cols = {name: [] for name in header}
        for row in reader:
            for name, value in zip(header, row):
                cols[name].append(float(value))
    return cols


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5):
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(0.0 if abs(v) < 1e-12 * step else v)
        v += step
    return out


def _label(v: float) -> str:
    return f"{v:.6g}"


def render_svg(columns: dict, spec: PlotSpec) -> str:
    for name in [spec.x, *spec.y]:
        if name not in columns:
            raise PlotError(f"column {name!r} not in data")
    xs = list(columns[spec.x])
    series = []
    for name in spec.y:
        pts = [(x, y) for x, y in zip(xs, columns[name]) if math.isfinite(x) and math.isfinite(y)
               and (y > 0 or not spec.logy)]
        if spec.logy:
            pts = [(x, math.log10(y)) for x, y in pts]
        series.append((name, pts))
    all_pts = [p for _, pts in series for p in pts]
    if all_pts:
        x0, x1 = min(p[0] for p in all_pts), max(p[0] for p in all_pts)
        y0, y1 = min(p[1] for p in all_pts), max(p[1] for p in all_pts)
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    left, top = MARGIN["left"], MARGIN["top"]
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return left + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return top + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<g class="axes" stroke="black" stroke-width="1">'
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}"/>'
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}"/></g>']
    ticks = ['<g class="ticks" font-family="sans-serif" font-size="11">']
    for v in _ticks(x0, x1):
        ticks.append(f'<line x1="{_fmt(sx(v))}" y1="{top + ph}" x2="{_fmt(sx(v))}" y2="{top + ph + 5}" '
                     f'stroke="black"/><text x="{_fmt(sx(v))}" y="{top + ph + 18}" '
                     f'text-anchor="middle">{_label(v)}</text>')
    for v in _ticks(y0, y1):
        text = _label(10 ** v) if spec.logy else _label(v)
        ticks.append(f'<line x1="{left - 5}" y1="{_fmt(sy(v))}" x2="{left}" y2="{_fmt(sy(v))}" '
                     f'stroke="black"/><text x="{left - 8}" y="{_fmt(sy(v) + 4)}" '
                     f'text-anchor="end">{text}</text>')
    ticks.append("</g>")
    out += ticks
    xlabel = spec.x if spec.xlabel is None else spec.xlabel
    out.append(f'<text x="{left + pw / 2:.2f}" y="{HEIGHT - 10}" text-anchor="middle" '
               f'font-family="sans-serif" font-size="13">{escape(xlabel)}</text>')
    if spec.ylabel:
        out.append(f'<text x="15" y="{top + ph / 2:.2f}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="13" transform="rotate(-90 15 {top + ph / 2:.2f})">{escape(spec.ylabel)}</text>')
    if spec.title:
        out.append(f'<text x="{left + pw / 2:.2f}" y="18" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="14">{escape(spec.title)}</text>')
    legend = ['<g class="legend" font-family="sans-serif" font-size="12">']
    for i, (name, pts) in enumerate(series):
        color = COLORS[i % len(COLORS)]
        if len(pts) >= 2:
            d = " ".join(("M" if j == 0 else "L") + f"{_fmt(sx(x))},{_fmt(sy(y))}"
                         for j, (x, y) in enumerate(pts))
            out.append(f'<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        elif len(pts) == 1:
            x, y = pts[0]
            out.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" fill="{color}"/>')
        ly = top + 10 + 18 * i
        lx = left + pw + 12
        legend.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" '
                      f'stroke-width="2"/><text x="{lx + 26}" y="{ly + 4}">'
                      f'{escape(spec.labels.get(name, name))}</text>')
    legend.append("</g>")
    out += legend
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_plot(csv_path, spec: PlotSpec, svg_path) -> None:
    """Render columns of ``csv_path`` as an SVG line plot."""
    svg = render_svg(read_csv_columns(csv_path), spec)
    with open(svg_path, "w", newline="\n") as fh:
        fh.write(svg)
