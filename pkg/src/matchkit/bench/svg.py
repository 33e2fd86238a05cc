"""Tiny SVG writers for line charts and heatmaps."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def line_chart(series: dict[str, tuple[list, list]], title: str, xlabel: str, ylabel: str,
               width: int = 480, height: int = 320) -> str:
    """One polyline per series; ``series[name] = (xs, ys)``."""
    ml, mr, mt, mb = 60, 120, 30, 45
    xs_all = [x for xs, _ in series.values() for x in xs] or [0, 1]
    ys_all = [y for _, ys in series.values() for y in ys if np.isfinite(y)] or [0, 1]
    x0, x1 = min(xs_all), max(xs_all)
    y0, y1 = min(0.0, min(ys_all)), max(ys_all)
    if x1 == x0:
        x1 = x0 + 1
    if y1 == y0:
        y1 = y0 + 1
    pw, ph = width - ml - mr, height - mt - mb
    sx = lambda x: ml + (x - x0) / (x1 - x0) * pw  # noqa: E731
    sy = lambda y: mt + ph - (y - y0) / (y1 - y0) * ph  # noqa: E731
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
           f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" transform="rotate(-90 14 {mt + ph / 2:.1f})">{escape(ylabel)}</text>']
    for t in np.linspace(y0, y1, 5):
        out.append(f'<text x="{ml - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    for t in sorted(set(xs_all)):
        out.append(f'<text x="{sx(t):.1f}" y="{mt + ph + 16}" text-anchor="middle">{t:g}</text>')
    for k, (name, (xs, ys)) in enumerate(series.items()):
        c = _PALETTE[k % len(_PALETTE)]
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys) if np.isfinite(y))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{pts}"/>')
        for x, y in zip(xs, ys):
            if np.isfinite(y):
                out.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="3" fill="{c}"/>')
        ly = mt + 14 * k + 6
        out.append(f'<rect x="{ml + pw + 10}" y="{ly - 8}" width="10" height="10" fill="{c}"/>')
        out.append(f'<text x="{ml + pw + 24}" y="{ly + 1}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def heatmap(values: np.ndarray, row_labels: list[str], col_labels: list[str], title: str,
            cell: int = 70) -> str:
    values = np.asarray(values, dtype=float)
    ml, mt = 130, 50
    width = ml + cell * values.shape[1] + 20
    height = mt + cell * values.shape[0] + 20
    finite = values[np.isfinite(values)]
    lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>']
    for j, c in enumerate(col_labels):
        out.append(f'<text x="{ml + cell * j + cell / 2:.1f}" y="{mt - 8}" text-anchor="middle">{escape(c)}</text>')
    for i, r in enumerate(row_labels):
        out.append(f'<text x="{ml - 6}" y="{mt + cell * i + cell / 2 + 4:.1f}" text-anchor="end">{escape(r)}</text>')
        for j in range(values.shape[1]):
            v = values[i, j]
            t = (v - lo) / span if np.isfinite(v) else 0.0
            shade = int(round(255 - 180 * t))
            out.append(f'<rect x="{ml + cell * j}" y="{mt + cell * i}" width="{cell}" height="{cell}" '
                       f'fill="rgb({shade},{shade},255)" stroke="white"/>')
            out.append(f'<text x="{ml + cell * j + cell / 2:.1f}" y="{mt + cell * i + cell / 2 + 4:.1f}" '
                       f'text-anchor="middle">{v:.3f}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
