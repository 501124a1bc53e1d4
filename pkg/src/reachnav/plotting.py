"""Deterministic SVG rendering of worlds, trajectories and clearance profiles.

Only the logged columns are used, so re-rendering from the CSV export gives
byte-identical output.
"""
from __future__ import annotations

import numpy as np

MODE_COLORS = {0: "#1f4fd8", 1: "#d62728", -1: "#d62728"}
WIDTH = 640


def _f(v: float) -> str:
    s = f"{v:.3f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class _Frame:
    def __init__(self, bounds, width=WIDTH, pad=20):
        x0, y0, x1, y1 = bounds
        span = max(x1 - x0, y1 - y0, 1e-9)
        self.s = (width - 2 * pad) / span
        self.x0, self.y1, self.pad = x0, y1, pad
        self.w = width
        self.h = int(round((y1 - y0) * self.s + 2 * pad))

    def pt(self, x, y) -> str:
        return f"{_f(self.pad + (x - self.x0) * self.s)},{_f(self.pad + (self.y1 - y) * self.s)}"


def _world_bounds(model, paths) -> tuple:
    boxes = [model.bounds()]
    for xs, ys in paths:
        if len(xs):
            boxes.append((xs.min(), ys.min(), xs.max(), ys.max()))
    b = np.array(boxes, dtype=float)
    x0, y0, x1, y1 = b[:, 0].min(), b[:, 1].min(), b[:, 2].max(), b[:, 3].max()
    m = 0.05 * max(x1 - x0, y1 - y0, 1.0)
    return x0 - m, y0 - m, x1 + m, y1 + m


def _ring_path(fr: _Frame, rings) -> str:
    parts = []
    for r in rings:
        parts.append("M" + " L".join(fr.pt(p[0], p[1]) for p in r) + " Z")
    return " ".join(parts)


def _mode_runs(m):
    """Index ranges [a, b] over which the logged mode stays in one color class."""
    runs, a = [], 0
    cls = (np.asarray(m) != 0).astype(int)
    for k in range(1, len(cls) + 1):
        if k == len(cls) or cls[k] != cls[a]:
            runs.append((a, min(k, len(cls) - 1), int(np.asarray(m)[a])))
            a = k
    return runs


def trajectory_svg(model, logs, title: str = "") -> str:
    """World, obstacles and one or more paths colored by mode."""
    paths = [(lg.array("x"), lg.array("y")) for lg in logs]
    fr = _Frame(_world_bounds(model, paths))
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{fr.w}" height="{fr.h}" '
           f'viewBox="0 0 {fr.w} {fr.h}">',
           f'<rect width="{fr.w}" height="{fr.h}" fill="#ffffff"/>']
    if title:
        out.append(f'<title>{title}</title>')
    if model.workspace is not None:
        out.append(f'<path d="{_ring_path(fr, model.workspace.rings)}" fill="none" '
                   'stroke="#333333" stroke-width="2"/>')
    for ob in model.obstacles:
        out.append(f'<path d="{_ring_path(fr, ob.rings)}" fill="#9a9a9a" fill-rule="evenodd" '
                   'stroke="#555555" stroke-width="1"/>')
    for lg, (xs, ys) in zip(logs, paths):
        m = lg.array("m")
        for a, b, mode in _mode_runs(m):
            pts = " ".join(fr.pt(xs[k], ys[k]) for k in range(a, b + 1))
            out.append(f'<polyline points="{pts}" fill="none" stroke="{MODE_COLORS[mode]}" '
                       'stroke-width="1.5"/>')
        for jr in lg.jumps:
            if int(jr[2]) == 0:
                c = fr.pt(float(jr[4]), float(jr[5])).split(",")
                out.append(f'<circle cx="{c[0]}" cy="{c[1]}" r="2.5" fill="#ff9900"/>')
        if len(xs):
            c = fr.pt(xs[0], ys[0]).split(",")
            out.append(f'<rect x="{_f(float(c[0]) - 3)}" y="{_f(float(c[1]) - 3)}" width="6" '
                       'height="6" fill="#000000"/>')
    c = fr.pt(0.0, 0.0).split(",")
    out.append(f'<circle cx="{c[0]}" cy="{c[1]}" r="4" fill="#e00000"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def clearance_svg(log, r_a: float, width: int = WIDTH, height: int = 240) -> str:
    """Ground-truth clearance against time with the r_a floor dashed."""
    t = log.array("t")
    c = log.array("clearance")
    finite = c[np.isfinite(c)]
    top = max(float(finite.max()) if len(finite) else 1.0, r_a) * 1.1
    t1 = float(t[-1]) if len(t) and t[-1] > 0 else 1.0
    pad = 30

    def pt(tt, cc):
        cc = min(cc, top)
        return f"{_f(pad + tt / t1 * (width - 2 * pad))},{_f(height - pad - cc / top * (height - 2 * pad))}"

    m = log.array("m")
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="#000000"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="#000000"/>']
    a, b = pt(0.0, r_a), pt(t1, r_a)
    out.append(f'<line x1="{a.split(",")[0]}" y1="{a.split(",")[1]}" x2="{b.split(",")[0]}" '
               f'y2="{b.split(",")[1]}" stroke="#888888" stroke-dasharray="4,3"/>')
    for s, e, mode in _mode_runs(m):
        pts = " ".join(pt(t[k], c[k]) for k in range(s, e + 1))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{MODE_COLORS[mode]}" '
                   'stroke-width="1.2"/>')
    out.append(f'<text x="{pad}" y="{pad - 8}" font-size="11">clearance [m], max {_f(top)}; '
               f't_end {_f(t1)} s</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
