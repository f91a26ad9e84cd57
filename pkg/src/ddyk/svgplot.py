"""Minimal self-contained SVG line and scatter charts."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]


def _bounds(vals):
    vals = [v for v in vals if math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi == lo:
        pad = abs(lo) * 0.1 or 1.0
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def chart(path, lines=(), points=(), title="", xlabel="", ylabel="", width=640, height=400,
          logx=False, logy=False):
    """Write an SVG chart.

    Args:
        lines: iterable of ``(label, xs, ys)``; polylines.
        points: iterable of ``(label, xs, ys)``; small circles.
        logx, logy: base-10 log axes (non-positive values are dropped).
    """
    def tx(v):
        return math.log10(v) if logx else v

    def ty(v):
        return math.log10(v) if logy else v

    def ok(x, y):
        return (math.isfinite(x) and math.isfinite(y) and (not logx or x > 0)
                and (not logy or y > 0))

    series = [(lab, [(tx(x), ty(y)) for x, y in zip(xs, ys) if ok(x, y)], kind)
              for kind, group in (("line", lines), ("point", points))
              for lab, xs, ys in group]
    xs = [p[0] for _, pts, _ in series for p in pts]
    ys = [p[1] for _, pts, _ in series for p in pts]
    x0, x1 = _bounds(xs)
    y0, y1 = _bounds(ys)
    ml, mr, mt, mb = 70, 20, 35, 50
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        lx = f"1e{fx:.1f}" if logx else f"{fx:.3g}"
        ly = f"1e{fy:.1f}" if logy else f"{fy:.3g}"
        out.append(f'<text x="{px(fx):.1f}" y="{mt + ph + 15}" text-anchor="middle">{lx}</text>')
        out.append(f'<text x="{ml - 5}" y="{py(fy) + 4:.1f}" text-anchor="end">{ly}</text>')
    out.append(f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="13">'
               f'{escape(title)}</text>')
    out.append(f'<text x="{ml + pw / 2}" y="{height - 12}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{mt + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 15 {mt + ph / 2})">{escape(ylabel)}</text>')
    for i, (lab, pts, kind) in enumerate(series):
        col = PALETTE[i % len(PALETTE)]
        if kind == "line" and len(pts) > 1:
            d = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in pts)
            out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{d}"/>')
        elif kind == "point":
            out.extend(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.5" fill="{col}" '
                       f'fill-opacity="0.6"/>' for x, y in pts)
        out.append(f'<text x="{ml + 8}" y="{mt + 14 + 13 * i}" fill="{col}">{escape(lab)}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
