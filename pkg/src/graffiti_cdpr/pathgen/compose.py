"""Composition of placed library shapes into one ordered, continuous PaintPath."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import reduce
from pathlib import Path

import numpy as np
from shapely.geometry import LinearRing, MultiPolygon, Polygon
from shapely.geometry.polygon import orient

from graffiti_cdpr.geometry import Rect
from graffiti_cdpr.pathgen.infill import DEFAULT_LINE_SPACING, infill
from graffiti_cdpr.strokes import CONTINUITY_TOL, OUTLINE, TRAVEL, PaintPath, Stroke

CLOSURE_TOL = 0.02


@dataclass(frozen=True)
class Placement:
    id: str
    shape: str
    tx: float = 0.0
    ty: float = 0.0
    scale: float = 1.0
    rotation_deg: float = 0.0
    face: str | None = None
    outline: str | None = "black"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"placement {self.id}: scale must be positive")

    def apply(self, stroke: Stroke) -> Stroke:
        return stroke.transformed(self.scale, math.radians(self.rotation_deg), (self.tx, self.ty))


@dataclass(frozen=True)
class PaintingSpec:
    """Canvas rectangle, shape placements and bottom-to-top layering by id."""

    canvas: Rect
    placements: tuple
    layering: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "placements", tuple(self.placements))
        layering = tuple(self.layering) if self.layering else tuple(p.id for p in self.placements)
        object.__setattr__(self, "layering", layering)

    def to_dict(self) -> dict:
        return {
            "canvas": self.canvas.as_list(),
            "placements": [vars(p).copy() for p in self.placements],
            "layering": list(self.layering),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PaintingSpec":
        return cls(Rect(*d["canvas"]), tuple(Placement(**p) for p in d["placements"]), tuple(d.get("layering", ())))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "PaintingSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PlacedShape:
    id: str
    outlines: tuple  # paint strokes in robot coordinates
    region: object  # shapely (Multi)Polygon, or None for line art
    face: str | None
    outline: str | None

    @property
    def bounds(self) -> Rect:
        return Rect.from_points(np.vstack([s.points for s in self.outlines]))


def outline_to_polygon(strokes, closure_tol: float = CLOSURE_TOL):
    """Filled region bounded by closed outline strokes, holes by the even-odd rule.

    Returns ``None`` when any stroke is open (line art without infill).
    """
    rings = []
    for s in strokes:
        if np.linalg.norm(s.end - s.start) > closure_tol:
            return None
        pts = s.points if np.array_equal(s.start, s.end) else np.vstack([s.points, s.start])
        if len(pts) < 4:
            raise ValueError("outline ring needs at least 3 distinct points")
        ring = LinearRing(pts)
        if not ring.is_simple:
            raise ValueError("self-intersecting outline")
        rings.append(Polygon(ring))
    if not rings:
        return None
    region = reduce(lambda a, b: a.symmetric_difference(b), rings)
    if not region.is_valid:
        raise ValueError("self-intersecting outline")
    if isinstance(region, MultiPolygon):
        return MultiPolygon([orient(p) for p in region.geoms])
    if isinstance(region, Polygon):
        return orient(region)
    polys = [g for g in getattr(region, "geoms", []) if isinstance(g, Polygon)]
    return MultiPolygon([orient(p) for p in polys]) if polys else None


def _check_layering(spec: PaintingSpec) -> list:
    ids = [p.id for p in spec.placements]
    if len(set(ids)) != len(ids):
        raise ValueError("layering not total: duplicate placement id")
    if len(set(spec.layering)) != len(spec.layering) or set(spec.layering) != set(ids):
        raise ValueError("layering not total: it must list every placement exactly once")
    by_id = {p.id: p for p in spec.placements}
    return [by_id[i] for i in spec.layering]


def compose(spec: PaintingSpec, library: dict, wfw_rect: Rect | None = None,
            closure_tol: float = CLOSURE_TOL) -> list:
    """Placed shapes in bottom-to-top order, each checked against the usable area."""
    area = spec.canvas if wfw_rect is None else spec.canvas.intersection(wfw_rect)
    placed = []
    for p in _check_layering(spec):
        if p.shape not in library:
            raise ValueError(f"unknown shape {p.shape!r}")
        strokes = tuple(p.apply(s) for s in library[p.shape] if s.paint)
        if not strokes:
            raise ValueError(f"shape {p.shape!r} has no paint strokes")
        shape = PlacedShape(p.id, strokes, None, p.face, p.outline)
        if area is None or not area.contains(shape.bounds):
            raise ValueError(f"placement {p.id!r} lies outside workspace")
        region = outline_to_polygon(strokes, closure_tol) if p.face is not None else None
        placed.append(PlacedShape(p.id, strokes, region, p.face, p.outline))
    return placed


def add_travel_strokes(strokes, start=None) -> PaintPath:
    """Join consecutive strokes with straight paint-off travel moves."""
    strokes = list(strokes)
    if not strokes:
        raise ValueError("need at least one stroke")
    out = []
    here = None if start is None else np.asarray(start, float)
    for s in strokes:
        if here is not None and np.linalg.norm(s.start - here) > CONTINUITY_TOL:
            out.append(Stroke([here, s.start], paint=False, kind=TRAVEL))
        elif here is not None:
            s = s.with_(points=np.vstack([here, s.points[1:]]))
        out.append(s)
        here = s.end
    return PaintPath(tuple(out))


def order_painting(placed, line_spacing: float = DEFAULT_LINE_SPACING, start=None) -> PaintPath:
    """Each shape in turn: face infill, then outlines; travel moves in between."""
    strokes = []
    here = None if start is None else np.asarray(start, float)
    for shape in placed:
        if shape.region is not None and shape.face is not None:
            fill = infill(shape.region, line_spacing, start=here, color=shape.face)
            strokes += fill
            here = fill[-1].end
        for s in shape.outlines:
            strokes.append(s.with_(kind=OUTLINE, color=shape.outline))
        here = strokes[-1].end
    return add_travel_strokes(strokes, start)
