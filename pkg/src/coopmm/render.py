"""Deterministic top-down SVG views of a scene with paths and base traces."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import scene as sc

PX_PER_M = 50.0
MARGIN = 10.0
PATH_COLORS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e")
TRACE_COLOR = "#7f7f7f"


def _f(v) -> str:
    s = f"{float(v):.2f}"
    return "0.00" if s == "-0.00" else s


def height_shade(h: float, h_max: float) -> str:
    """Grey level for an obstacle height: taller is darker."""
    frac = 0.0 if h_max <= 0 else min(max(h / h_max, 0.0), 1.0)
    g = int(round(200 - 160 * frac))
    return f"#{g:02x}{g:02x}{g:02x}"


class _Canvas:
    def __init__(self, scene: sc.Scene):
        self.lo = scene.world_min
        self.hi = scene.world_max
        self.w = (self.hi[0] - self.lo[0]) * PX_PER_M + 2 * MARGIN
        self.h = (self.hi[1] - self.lo[1]) * PX_PER_M + 2 * MARGIN

    def xy(self, x, y):
        """SVG pixel coordinates; world +y points up."""
        return (MARGIN + (x - self.lo[0]) * PX_PER_M,
                MARGIN + (self.hi[1] - y) * PX_PER_M)

    def points(self, pts) -> str:
        return " ".join(f"{_f(u)},{_f(v)}" for u, v in (self.xy(p[0], p[1]) for p in pts))


def scene_svg(scene: sc.Scene, paths=(), base_traces=(), title: str | None = None) -> str:
    """SVG text for ``scene`` with object ``paths`` (each (N, >=2)) and ``base_traces``.

    Occupied cells are merged into horizontal runs of equal height and shaded
    by height.  Start and goal object positions get circle markers.
    """
    cv = _Canvas(scene)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(cv.w)}" height="{_f(cv.h)}" '
           f'viewBox="0 0 {_f(cv.w)} {_f(cv.h)}">']
    if title:
        out.append(f"<title>{title}</title>")
    x0, y0 = cv.xy(cv.lo[0], cv.hi[1])
    out.append(f'<rect id="world" x="{_f(x0)}" y="{_f(y0)}" width="{_f(cv.w - 2 * MARGIN)}" '
               f'height="{_f(cv.h - 2 * MARGIN)}" fill="#ffffff" stroke="#000000"/>')
    s = scene.cell_size
    out.append('<g id="obstacles">')
    h_max = scene.max_height
    rows, cols = scene.shape
    for r in range(rows):
        c = 0
        row = scene.heights[r]
        while c < cols:
            h = row[c]
            if h <= 0:
                c += 1
                continue
            c1 = c
            while c1 + 1 < cols and row[c1 + 1] == h:
                c1 += 1
            wx = scene.origin[0] + c * s
            wy = scene.origin[1] + (r + 1) * s
            px, py = cv.xy(wx, wy)
            out.append(f'<rect x="{_f(px)}" y="{_f(py)}" width="{_f((c1 - c + 1) * s * PX_PER_M)}" '
                       f'height="{_f(s * PX_PER_M)}" fill="{height_shade(h, h_max)}" '
                       f'data-height="{_f(h)}"/>')
            c = c1 + 1
    out.append("</g>")
    for k, tr in enumerate(base_traces):
        tr = np.asarray(tr, dtype=float)
        if len(tr) >= 2:
            out.append(f'<polyline class="base-trace" data-index="{k}" points="{cv.points(tr)}" '
                       f'fill="none" stroke="{TRACE_COLOR}" stroke-width="1" stroke-dasharray="3,2"/>')
    for k, p in enumerate(paths):
        p = np.asarray(p, dtype=float)
        if len(p) >= 2:
            color = PATH_COLORS[k % len(PATH_COLORS)]
            out.append(f'<polyline class="object-path" data-index="{k}" points="{cv.points(p)}" '
                       f'fill="none" stroke="{color}" stroke-width="2"/>')
    for name, t, color in (("start", scene.start, "#2ca02c"), ("goal", scene.goal, "#d62728")):
        if t is not None:
            px, py = cv.xy(t.p[0], t.p[1])
            out.append(f'<circle id="{name}" cx="{_f(px)}" cy="{_f(py)}" r="6" fill="{color}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_scene_svg(scene: sc.Scene, paths=(), out=None, base_traces=(), title=None) -> str:
    """Render and, when ``out`` is given, write the SVG; returns the text."""
    text = scene_svg(scene, paths, base_traces, title)
    if out is not None:
        Path(out).write_text(text)
    return text


def parse_points(points: str) -> np.ndarray:
    """Pixel pairs (N, 2) from an SVG ``points`` attribute."""
    return np.array([[float(v) for v in p.split(",")] for p in points.split()])


def pixel_to_world(scene: sc.Scene, px) -> np.ndarray:
    """Inverse of the canvas mapping for pixel pairs (N, 2)."""
    cv = _Canvas(scene)
    px = np.atleast_2d(np.asarray(px, dtype=float))
    x = cv.lo[0] + (px[:, 0] - MARGIN) / PX_PER_M
    y = cv.hi[1] - (px[:, 1] - MARGIN) / PX_PER_M
    return np.column_stack([x, y])
