"""Static SVG trajectory figures.

Dashed polylines are robot paths, gray circles obstacles at their final
positions, blue triangles start points and yellow triangles end points.
3D records get an x-y panel and an x-z panel side by side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import SimulationRecord

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf", "#ff7f0e")


@dataclass(frozen=True)
class SvgStyle:
    panel_width: float = 480.0
    margin: float = 20.0
    marker_size: float = 6.0
    stroke_width: float = 1.5
    dash: str = "6,3"
    start_color: str = "#1f4fd6"
    end_color: str = "#f2c200"
    obstacle_color: str = "#b0b0b0"


def _num(v: float) -> str:
    s = "%.3f" % v
    return "0.000" if s == "-0.000" else s


def _triangle(kind: str, x: float, y: float, size: float, color: str) -> str:
    pts = [(x, y - size), (x - 0.87 * size, y + 0.5 * size), (x + 0.87 * size, y + 0.5 * size)]
    return '<polygon class="%s" points="%s" fill="%s" stroke="black" stroke-width="0.5"/>' % (
        kind, " ".join("%s,%s" % (_num(a), _num(b)) for a, b in pts), color)


def _panel(record: SimulationRecord, axes: tuple[int, int], style: SvgStyle, x_off: float) -> tuple[list[str], float]:
    pos = record.positions[:, :, list(axes)]
    obs = record.obstacles[-1][:, list(axes)] if record.obstacle_radii.size else np.zeros((0, 2))
    radii = record.obstacle_radii
    lo = pos.reshape(-1, 2).min(axis=0)
    hi = pos.reshape(-1, 2).max(axis=0)
    if len(obs):
        lo = np.minimum(lo, (obs - radii[:, None]).min(axis=0))
        hi = np.maximum(hi, (obs + radii[:, None]).max(axis=0))
    span = np.maximum(hi - lo, 1e-9)
    scale = (style.panel_width - 2 * style.margin) / max(span.max(), 1e-9)
    height = span[1] * scale + 2 * style.margin

    def tx(p):
        return (x_off + style.margin + (p[0] - lo[0]) * scale,
                height - style.margin - (p[1] - lo[1]) * scale)

    out = []
    for c, rad in zip(obs, radii):
        x, y = tx(c)
        out.append('<circle class="obstacle" cx="%s" cy="%s" r="%s" fill="%s" fill-opacity="0.6"/>'
                   % (_num(x), _num(y), _num(rad * scale), style.obstacle_color))
    for i in range(record.N):
        color = PALETTE[i % len(PALETTE)]
        path = [tx(p) for p in pos[:, i]]
        if np.all(pos[:, i] == pos[0, i]):
            x, y = path[0]
            out.append('<circle class="stationary" cx="%s" cy="%s" r="%s" fill="%s"/>'
                       % (_num(x), _num(y), _num(style.marker_size / 2), color))
            continue
        out.append('<polyline class="robot" points="%s" fill="none" stroke="%s" stroke-width="%s" '
                   'stroke-dasharray="%s"/>' % (" ".join("%s,%s" % (_num(a), _num(b)) for a, b in path),
                                                color, _num(style.stroke_width), style.dash))
        out.append(_triangle("start", *path[0], style.marker_size, style.start_color))
        out.append(_triangle("end", *path[-1], style.marker_size, style.end_color))
    return out, height


def render_svg(record: SimulationRecord, style: SvgStyle | None = None) -> str:
    """Deterministic SVG text for ``record``."""
    style = style or SvgStyle()
    if record.T == 0:
        raise ValueError("cannot draw an empty record")
    panels = [(0, 1)] if record.n == 2 else [(0, 1), (0, 2)]
    body, heights = [], []
    for j, axes in enumerate(panels):
        elems, h = _panel(record, axes, style, j * style.panel_width)
        body.append('<g class="panel" id="panel-%s%s">' % ("xyz"[axes[0]], "xyz"[axes[1]]))
        body += ["  " + e for e in elems]
        body.append("</g>")
        heights.append(h)
    width = style.panel_width * len(panels)
    height = max(heights)
    head = ('<svg xmlns="http://www.w3.org/2000/svg" width="%s" height="%s" viewBox="0 0 %s %s">'
            % (_num(width), _num(height), _num(width), _num(height)))
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>"]) + "\n"
