from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in metres."""

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if self.xmax < self.xmin or self.ymax < self.ymin:
            raise ValueError("rectangle has negative extent")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def contains(self, other: "Rect", tol: float = 1e-12) -> bool:
        return (other.xmin >= self.xmin - tol and other.ymin >= self.ymin - tol
                and other.xmax <= self.xmax + tol and other.ymax <= self.ymax + tol)

    def contains_point(self, p, tol: float = 1e-12) -> bool:
        return self.xmin - tol <= p[0] <= self.xmax + tol and self.ymin - tol <= p[1] <= self.ymax + tol

    def intersection(self, other: "Rect") -> "Rect | None":
        xmin, ymin = max(self.xmin, other.xmin), max(self.ymin, other.ymin)
        xmax, ymax = min(self.xmax, other.xmax), min(self.ymax, other.ymax)
        if xmax < xmin or ymax < ymin:
            return None
        return Rect(xmin, ymin, xmax, ymax)

    def as_list(self) -> list:
        return [float(self.xmin), float(self.ymin), float(self.xmax), float(self.ymax)]

    @classmethod
    def from_points(cls, pts) -> "Rect":
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        return cls(lo[0], lo[1], hi[0], hi[1])


def polyline_length(points) -> float:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def point_segment_distance(points, a, b) -> np.ndarray:
    """Distance from each of ``points`` (N,2) to segment ``ab``."""
    points = np.asarray(points, dtype=float)
    a = np.asarray(a, dtype=float)
    ab = np.asarray(b, dtype=float) - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    s = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + s[:, None] * ab), axis=1)
