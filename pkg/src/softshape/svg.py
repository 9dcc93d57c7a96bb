"""Tiny SVG writer: small multiples of orthographically projected 3D points."""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

PANEL = 160
PAD = 12


def _view(azimuth=35.0, elevation=25.0):
    a, e = math.radians(azimuth), math.radians(elevation)
    right = np.array([math.cos(a), math.sin(a), 0.0])
    up = np.array([-math.sin(a) * math.sin(e), math.cos(a) * math.sin(e), math.cos(e)])
    return np.stack([right, up])


def render_panels(shapes, titles=None, ordered=True, columns=8, azimuth=35.0, elevation=25.0) -> str:
    """SVG document with one panel per ``(n, 3)`` array.

    All panels share one projection and scale so shapes are comparable.
    Ordered marker shapes are drawn as polylines with dots, clouds as dots.
    """
    shapes = [np.asarray(s, dtype=np.float64).reshape(-1, 3) for s in shapes]
    if not shapes:
        raise ValueError("nothing to draw")
    titles = titles or [str(i) for i in range(len(shapes))]
    V = _view(azimuth, elevation)
    proj = [s @ V.T for s in shapes]
    allp = np.concatenate(proj)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = float(max(hi - lo)) or 1.0
    scale = (PANEL - 2 * PAD) / span
    cols = min(columns, len(shapes))
    rows = math.ceil(len(shapes) / cols)
    W, H = cols * PANEL, rows * (PANEL + 16)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" width="{W}" height="{H}">',
           f'<rect width="{W}" height="{H}" fill="white"/>']
    for i, (p, title) in enumerate(zip(proj, titles)):
        ox = (i % cols) * PANEL
        oy = (i // cols) * (PANEL + 16)
        xs = ox + PAD + (p[:, 0] - lo[0]) * scale
        ys = oy + 16 + PANEL - PAD - (p[:, 1] - lo[1]) * scale
        out.append(f'<g class="panel" id="panel-{i}">')
        out.append(f'<rect x="{ox + 1}" y="{oy + 1}" width="{PANEL - 2}" height="{PANEL + 14}" '
                   'fill="none" stroke="#ccc"/>')
        out.append(f'<text x="{ox + 6}" y="{oy + 13}" font-size="11" font-family="sans-serif">'
                   f'{escape(str(title))}</text>')
        if ordered and p.shape[0] > 1:
            pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
            out.append(f'<polyline points="{pts}" fill="none" stroke="#1f5fa8" stroke-width="1.5"/>')
        r = 2.2 if ordered else 0.9
        for x, y in zip(xs, ys):
            out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="#c0392b"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out)


def write_svg(path, shapes, titles=None, ordered=True):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_panels(shapes, titles, ordered))
