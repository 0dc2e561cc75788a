"""SVG drawings of planar graphs, flat or in the Poincare disk."""
from __future__ import annotations

import math

import numpy as np

from .geometry import poincare_coords
from .nne import NNEGraph

__all__ = ["render_svg", "geodesic_path"]

SIZE = 640
MAX_ARC_RADIUS = 1e4


def _f(v: float) -> str:
    s = format(float(v), ".9g")
    return "0" if s == "-0" else s


def geodesic_path(a, b) -> str:
    """SVG path data for the Poincare-disk geodesic between disk points ``a`` and ``b``.

    The geodesic is an arc of the circle through ``a`` and ``b`` orthogonal to
    the unit circle; nearly straight ones (radius above ``MAX_ARC_RADIUS``,
    including diameters) are drawn as chords.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    start = f"M {_f(a[0])} {_f(a[1])}"
    # centre c satisfies c.a = (|a|^2 + 1)/2 and c.b = (|b|^2 + 1)/2
    M = np.array([a, b])
    det = a[0] * b[1] - a[1] * b[0]
    if abs(det) > 1e-15:
        c = np.linalg.solve(M, 0.5 * np.array([a @ a + 1.0, b @ b + 1.0]))
        r2 = c @ c - 1.0
        if r2 > 0 and math.sqrt(r2) <= MAX_ARC_RADIUS:
            r = math.sqrt(r2)
            u, v = a - c, b - c
            sweep = 1 if u[0] * v[1] - u[1] * v[0] > 0 else 0
            return f"{start} A {_f(r)} {_f(r)} 0 0 {sweep} {_f(b[0])} {_f(b[1])}"
    return f"{start} L {_f(b[0])} {_f(b[1])}"


def render_svg(graph: NNEGraph, style: str | None = None, window: float | None = None) -> str:
    """SVG 1.1 drawing of a 2-dimensional graph.

    ``style`` is ``"euclidean"`` (straight edges, sampling ball scaled to the
    unit disk) or ``"poincare"`` (hyperbolic graphs only).  Edges come from
    closed vertices; unclosed vertices are drawn hollow.  The window circle
    ``B_t`` (default: the configuration's window radius) is overlaid.
    """
    space = graph.space
    if space.dim != 2:
        raise ValueError(f"rendering needs a 2-dimensional graph, got d={space.dim}")
    style = style or ("poincare" if space.hyperbolic_kind else "euclidean")
    if style not in ("euclidean", "poincare"):
        raise ValueError(f"unknown style {style!r}")
    if style == "poincare" and not space.hyperbolic_kind:
        raise ValueError("the Poincare style needs a hyperbolic graph")
    config = graph.config
    t = config.window_radius if window is None else float(window)
    pts = config.points
    if style == "poincare":
        xy = poincare_coords(space, pts) if len(pts) else np.zeros((0, 2))
        window_r = math.tanh(0.5 * t)
    elif space.hyperbolic_kind:
        # flat drawing of the hyperbolic polar coordinates, scaled to the unit disk
        norms = config.norms
        dirs = pts[:, 1:] / np.maximum(np.linalg.norm(pts[:, 1:], axis=1, keepdims=True), 1e-300)
        xy = dirs * (norms / config.sample_radius)[:, None]
        window_r = t / config.sample_radius
    else:
        xy = pts / config.sample_radius
        window_r = t / config.sample_radius
    half = SIZE / 2
    scale = 0.95 * half
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SIZE}" height="{SIZE}" '
        f'viewBox="0 0 {SIZE} {SIZE}">',
        f'<rect width="{SIZE}" height="{SIZE}" fill="white"/>',
        f'<g transform="translate({_f(half)} {_f(half)}) scale({_f(scale)} {_f(-scale)})">',
    ]
    if style == "poincare":
        out.append('<circle cx="0" cy="0" r="1" fill="none" stroke="#bbbbbb" stroke-width="0.003"/>')
    out.append(
        f'<circle class="window" cx="0" cy="0" r="{_f(window_r)}" fill="none" '
        'stroke="#cc3333" stroke-width="0.004" stroke-dasharray="0.02 0.012"/>'
    )
    src, dst = graph.closed_edges()
    pairs = sorted({(min(a, b), max(a, b)) for a, b in zip(src.tolist(), dst.tolist())})
    out.append('<g class="edges" fill="none" stroke="#1f4e8c" stroke-width="0.002">')
    for a, b in pairs:
        if style == "poincare":
            d = geodesic_path(xy[a], xy[b])
        else:
            d = f"M {_f(xy[a][0])} {_f(xy[a][1])} L {_f(xy[b][0])} {_f(xy[b][1])}"
        out.append(f'<path d="{d}"/>')
    out.append("</g>")
    out.append('<g class="vertices" stroke="black" stroke-width="0.002">')
    for i, (x, y) in enumerate(xy):
        fill = "black" if graph.closed[i] else "white"
        out.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="0.006" fill="{fill}"/>')
    out.append("</g>")
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
