"""Minimal self-contained SVG line charts."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"]


def line_chart_svg(series: dict, title: str = "", xlabel: str = "step", logy: bool = True,
                   width: int = 640, height: int = 400) -> str:
    """Render ``{label: (x, y)}`` as an SVG document string.

    With ``logy`` non-positive values are dropped.
    """
    left, right, top, bottom = 70, 20, 30, 45
    pw, ph = width - left - right, height - top - bottom
    cleaned = {}
    for label, (x, y) in series.items():
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(y) & (y > 0 if logy else True)
        if ok.any():
            cleaned[label] = (x[ok], np.log10(y[ok]) if logy else y[ok])
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'font-family="sans-serif" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="18" text-anchor="middle" font-size="13">{escape(title)}</text>']
    if cleaned:
        xs = np.concatenate([v[0] for v in cleaned.values()])
        ys = np.concatenate([v[1] for v in cleaned.values()])
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = float(ys.min()), float(ys.max())
        if x1 == x0:
            x1 = x0 + 1
        if y1 == y0:
            y1 = y0 + 1

        def px(v):
            return left + (v - x0) / (x1 - x0) * pw

        def py(v):
            return top + ph - (v - y0) / (y1 - y0) * ph

        parts.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>')
        for k in range(5):
            yv = y0 + (y1 - y0) * k / 4
            lab = f"1e{yv:.1f}" if logy else f"{yv:.3g}"
            parts.append(f'<text x="{left - 6}" y="{py(yv) + 4:.1f}" text-anchor="end">{lab}</text>')
            xv = x0 + (x1 - x0) * k / 4
            parts.append(f'<text x="{px(xv):.1f}" y="{top + ph + 16}" text-anchor="middle">{xv:.4g}</text>')
        parts.append(f'<text x="{left + pw / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>')
        for k, (label, (x, y)) in enumerate(cleaned.items()):
            color = _COLORS[k % len(_COLORS)]
            pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
            parts.append(f'<text x="{left + pw - 4}" y="{top + 14 + 13 * k}" text-anchor="end" '
                         f'fill="{color}">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, series: dict, **kw) -> None:
    with open(path, "w") as fh:
        fh.write(line_chart_svg(series, **kw))
