"""Stroke, PaintPath and the shape-library file format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from graffiti_cdpr.geometry import polyline_length

CONTINUITY_TOL = 1e-9

OUTLINE = "outline"
INFILL = "infill"
TRAVEL = "travel"


@dataclass(frozen=True)
class Stroke:
    """Ordered planar polyline, optionally timed, with a paint flag.

    ``kind`` tags where the stroke came from (outline, infill or travel);
    trajectory generation discretizes the kinds differently.
    """

    points: np.ndarray
    vertex_times: np.ndarray | None = None
    paint: bool = True
    kind: str = OUTLINE
    color: str | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        if len(pts) < 2:
            raise ValueError("stroke needs >=2 points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("stroke points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.vertex_times is not None:
            t = np.array(self.vertex_times, dtype=float).ravel()
            if len(t) != len(pts):
                raise ValueError("vertex_times must match the number of points")
            if np.any(np.diff(t) <= 0):
                raise ValueError("vertex_times must be strictly increasing")
            t.setflags(write=False)
            object.__setattr__(self, "vertex_times", t)
        if self.kind not in (OUTLINE, INFILL, TRAVEL):
            raise ValueError(f"unknown stroke kind {self.kind!r}")

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    @property
    def length(self) -> float:
        return polyline_length(self.points)

    def with_(self, **changes) -> "Stroke":
        d = dict(points=self.points, vertex_times=self.vertex_times, paint=self.paint,
                 kind=self.kind, color=self.color)
        d.update(changes)
        return Stroke(**d)

    def transformed(self, scale: float, rotation: float, offset) -> "Stroke":
        c, s = np.cos(rotation), np.sin(rotation)
        R = np.array([[c, -s], [s, c]])
        return self.with_(points=scale * self.points @ R.T + np.asarray(offset, float))

    def to_dict(self) -> dict:
        d = {"points": self.points.tolist(), "paint": bool(self.paint)}
        if self.vertex_times is not None:
            d["vertex_times"] = self.vertex_times.tolist()
        if self.kind != OUTLINE:
            d["kind"] = self.kind
        if self.color is not None:
            d["color"] = self.color
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Stroke":
        return cls(points=d["points"], vertex_times=d.get("vertex_times"), paint=d.get("paint", True),
                   kind=d.get("kind", OUTLINE), color=d.get("color"))


@dataclass(frozen=True)
class PaintPath:
    """Position-continuous sequence of paint and travel strokes."""

    strokes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "strokes", tuple(self.strokes))
        gap = self.max_gap()
        if gap > CONTINUITY_TOL:
            raise ValueError(f"path is not position-continuous (gap {gap:.3g} m)")

    @property
    def colors(self) -> list:
        return [s.color for s in self.strokes]

    def max_gap(self) -> float:
        gaps = [np.linalg.norm(b.start - a.end) for a, b in zip(self.strokes, self.strokes[1:])]
        return max(gaps, default=0.0)

    def paint_length(self) -> float:
        return sum(s.length for s in self.strokes if s.paint)

    def to_dict(self) -> dict:
        return {"strokes": [s.to_dict() for s in self.strokes]}

    @classmethod
    def from_dict(cls, d: dict) -> "PaintPath":
        return cls(tuple(Stroke.from_dict(s) for s in d["strokes"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "PaintPath":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --- shape library ------------------------------------------------------------------
#
# JSON document {"format": "graffiti-shape-library", "version": 1,
#                "shapes": [{"name": ..., "strokes": [stroke, ...]}, ...]}
# Python's float repr is the shortest string that round-trips, so reloads are exact.

LIBRARY_FORMAT = "graffiti-shape-library"


def export_library(shapes, path) -> None:
    """Write named stroke sets.  ``shapes`` is a mapping or (name, strokes) pairs."""
    items = list(shapes.items()) if hasattr(shapes, "items") else list(shapes)
    names = [name for name, _ in items]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise ValueError(f"duplicate name: {', '.join(dupes)}")
    doc = {
        "format": LIBRARY_FORMAT,
        "version": 1,
        "shapes": [{"name": name, "strokes": [s.to_dict() for s in strokes]} for name, strokes in items],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_library(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != LIBRARY_FORMAT:
        raise ValueError(f"{path}: not a shape-library file")
    library = {}
    for shape in doc["shapes"]:
        if shape["name"] in library:
            raise ValueError(f"duplicate name: {shape['name']}")
        library[shape["name"]] = [Stroke.from_dict(s) for s in shape["strokes"]]
    return library
