"""Deterministic SVG previews of paint paths and simulated runs."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from graffiti_cdpr.geometry import Rect
from graffiti_cdpr.runtime import SimulationLog
from graffiti_cdpr.strokes import PaintPath

DEFAULT_LINE_WIDTH = 0.025
STYLES = ("dashed", "hidden")
_TRAVEL_COLOR = "#888888"


def _fmt(v: float) -> str:
    s = f"{v:.5f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


def _polyline(points: np.ndarray, color: str, width: float, dashed: bool = False) -> str:
    pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
    dash = f' stroke-dasharray="{_fmt(2 * width)},{_fmt(2 * width)}"' if dashed else ""
    return (f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{_fmt(width)}" '
            f'stroke-linecap="round" stroke-linejoin="round"{dash}/>')


def _segments_from_path(path: PaintPath):
    for s in path.strokes:
        yield s.points, s.paint, (s.color or "black")


def _segments_from_log(log: SimulationLog):
    pos = log.positions
    on = np.asarray(log.paint_on, bool)
    if len(pos) < 2:
        return
    edges = np.flatnonzero(on[1:] != on[:-1]) + 1
    bounds = np.concatenate([[0], edges, [len(on)]])
    for a, b in zip(bounds[:-1], bounds[1:]):
        # include the next sample so consecutive runs join up
        seg = pos[a:min(b + 1, len(pos))]
        if len(seg) >= 2:
            yield seg, bool(on[a]), "black"


def render_preview(source, out_path, style: str = "dashed", line_width: float = DEFAULT_LINE_WIDTH,
                   frame: Rect | None = None) -> int:
    """Write an SVG of paint marks (and travel, unless ``style='hidden'``).

    ``source`` is a PaintPath or a SimulationLog; returns the number of paint
    polylines drawn.
    """
    if style not in STYLES:
        raise ValueError(f"style must be one of {STYLES}")
    if isinstance(source, PaintPath):
        if not source.strokes:
            raise ValueError("empty input")
        segments = list(_segments_from_path(source))
    elif isinstance(source, SimulationLog):
        if len(source) == 0:
            raise ValueError("empty input")
        segments = list(_segments_from_log(source))
    else:
        raise TypeError("source must be a PaintPath or SimulationLog")
    if frame is None:
        frame = Rect.from_points(np.vstack([s[0] for s in segments]))
    pad = 2 * line_width
    x0, y0 = frame.xmin - pad, frame.ymin - pad
    w, h = frame.width + 2 * pad, frame.height + 2 * pad
    body, n_paint = [], 0
    for pts, paint, color in segments:
        if paint:
            body.append(_polyline(pts, color, line_width))
            n_paint += 1
        elif style == "dashed":
            body.append(_polyline(pts, _TRAVEL_COLOR, line_width / 5, dashed=True))
    # flip y so the image is upright: y_svg = -y
    doc = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{_fmt(x0)} {_fmt(-(y0 + h))} {_fmt(w)} {_fmt(h)}" '
        f'width="{_fmt(w * 400)}" height="{_fmt(h * 400)}">',
        '<g transform="scale(1,-1)">',
        *body,
        "</g>",
        "</svg>",
    ]
    Path(out_path).write_text("\n".join(doc) + "\n")
    return n_paint
