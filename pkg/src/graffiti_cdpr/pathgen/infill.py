"""Boustrophedon cell decomposition and serpentine infill of planar polygons."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from shapely.geometry import MultiPolygon, Polygon

from graffiti_cdpr.strokes import INFILL, Stroke

DEFAULT_LINE_SPACING = 0.025


@dataclass
class _Trapezoid:
    y0: float
    y1: float
    left: tuple  # x at y0, x at y1
    right: tuple


@dataclass
class Cell:
    """Vertical stack of trapezoids bounded by one left and one right chain."""

    pieces: list

    @property
    def y_min(self) -> float:
        return self.pieces[0].y0

    @property
    def y_max(self) -> float:
        return self.pieces[-1].y1

    def _chain(self, side: str) -> np.ndarray:
        pts = [(getattr(self.pieces[0], side)[0], self.y_min)]
        pts += [(getattr(p, side)[1], p.y1) for p in self.pieces]
        return np.array(pts)

    @property
    def left_chain(self) -> np.ndarray:
        return self._chain("left")

    @property
    def right_chain(self) -> np.ndarray:
        return self._chain("right")

    def span(self, y: float) -> tuple:
        lc, rc = self.left_chain, self.right_chain
        return float(np.interp(y, lc[:, 1], lc[:, 0])), float(np.interp(y, rc[:, 1], rc[:, 0]))


def _rings(geom) -> list:
    polys = geom.geoms if isinstance(geom, MultiPolygon) else [geom]
    rings = []
    for p in polys:
        rings.append(np.asarray(p.exterior.coords))
        rings += [np.asarray(r.coords) for r in p.interiors]
    return rings


def _edges(geom) -> np.ndarray:
    """Non-horizontal edges as rows (x0, y0, x1, y1) with y0 < y1."""
    out = []
    for ring in _rings(geom):
        for a, b in zip(ring[:-1], ring[1:]):
            if a[1] == b[1]:
                continue
            out.append((*a, *b) if a[1] < b[1] else (*b, *a))
    return np.array(out, dtype=float).reshape(-1, 4)


def _x_at(edges: np.ndarray, y) -> np.ndarray:
    t = (y - edges[:, 1]) / (edges[:, 3] - edges[:, 1])
    return edges[:, 0] + t * (edges[:, 2] - edges[:, 0])


def decompose(polygon) -> list:
    """Boustrophedon cells of ``polygon``, split only where connectivity changes."""
    if polygon.is_empty or polygon.area <= 1e-12:
        raise ValueError("degenerate polygon")
    edges = _edges(polygon)
    ys = np.unique(np.concatenate([edges[:, 1], edges[:, 3]]))
    bands = []
    for y0, y1 in zip(ys[:-1], ys[1:]):
        ym = 0.5 * (y0 + y1)
        live = edges[(edges[:, 1] <= ym) & (edges[:, 3] >= ym)]
        order = np.argsort(_x_at(live, ym))
        live = live[order]
        traps = []
        for k in range(0, len(live) - 1, 2):
            le, re_ = live[k:k + 1], live[k + 1:k + 2]
            traps.append(_Trapezoid(y0, y1, (float(_x_at(le, y0)[0]), float(_x_at(le, y1)[0])),
                                    (float(_x_at(re_, y0)[0]), float(_x_at(re_, y1)[0]))))
        bands.append(traps)

    def touching(lower: _Trapezoid, upper: _Trapezoid) -> bool:
        lo = max(lower.left[1], upper.left[0])
        hi = min(lower.right[1], upper.right[0])
        return hi - lo > 1e-12

    cells: list = []
    open_cells: dict = {}  # trapezoid index in previous band -> cell
    for j, traps in enumerate(bands):
        prev = bands[j - 1] if j > 0 else []
        up = {a: [b for b in range(len(traps)) if touching(prev[a], traps[b])] for a in range(len(prev))}
        down = {b: [a for a in range(len(prev)) if touching(prev[a], traps[b])] for b in range(len(traps))}
        new_open = {}
        for b, trap in enumerate(traps):
            below = down[b]
            if len(below) == 1 and len(up[below[0]]) == 1 and below[0] in open_cells:
                cell = open_cells[below[0]]
                cell.pieces.append(trap)
            else:
                cell = Cell([trap])
                cells.append(cell)
            new_open[b] = cell
        open_cells = new_open
    return cells


def _adjacency(cells: list) -> list:
    adj = [set() for _ in cells]
    for i, a in enumerate(cells):
        for j, b in enumerate(cells):
            if i == j:
                continue
            for lower, upper in ((a, b), (b, a)):
                if abs(lower.y_max - upper.y_min) < 1e-12:
                    l0, r0 = lower.span(lower.y_max)
                    l1, r1 = upper.span(upper.y_min)
                    if min(r0, r1) - max(l0, l1) > 1e-12:
                        adj[i].add(j)
    return [sorted(s) for s in adj]


def pass_heights(y_min: float, y_max: float, spacing: float) -> np.ndarray:
    """Pass ordinates: ``ceil(H / spacing)`` passes (at least one) centred in the cell."""
    height = y_max - y_min
    n = max(1, math.ceil(height / spacing - 1e-9))
    first = y_min + 0.5 * (height - (n - 1) * spacing)
    return first + spacing * np.arange(n)


def _boundary_between(chain: np.ndarray, ya: float, yb: float) -> np.ndarray:
    """Chain vertices strictly between two ordinates, ordered from ``ya`` to ``yb``."""
    lo, hi = min(ya, yb), max(ya, yb)
    inner = chain[(chain[:, 1] > lo) & (chain[:, 1] < hi)]
    return inner if ya < yb else inner[::-1]


def cell_serpentine(cell: Cell, spacing: float, from_top: bool = False, start_right: bool = False) -> np.ndarray:
    """Alternating horizontal passes joined along the cell's side chains."""
    ys = pass_heights(cell.y_min, cell.y_max, spacing)
    if from_top:
        ys = ys[::-1]
    left, right = cell.left_chain, cell.right_chain
    pts = []
    to_right = not start_right
    prev_y = None
    for y in ys:
        xl, xr = cell.span(y)
        if prev_y is not None:
            # connector follows the side where the previous pass ended
            side = left if to_right else right
            pts.extend(_boundary_between(side, prev_y, y).tolist())
        a, b = ((xl, y), (xr, y)) if to_right else ((xr, y), (xl, y))
        pts.extend([a, b])
        to_right = not to_right
        prev_y = y
    out = np.array(pts, dtype=float)
    keep = np.concatenate([[True], np.any(np.diff(out, axis=0) != 0, axis=1)])
    out = out[keep]
    if len(out) < 2:
        out = np.vstack([out, out])
    return out


def _variants(cell: Cell, spacing: float) -> list:
    return [cell_serpentine(cell, spacing, top, right) for top in (False, True) for right in (False, True)]


def infill(polygon, line_spacing: float = DEFAULT_LINE_SPACING, start=None, color=None) -> list:
    """Serpentine infill strokes, one per cell, in a greedy depth-first cell order.

    From the current nozzle position the walk moves to the unvisited adjacent
    cell (or, when stuck, any unvisited cell) whose nearest serpentine start is
    closest, and paints it starting from that corner.
    """
    if line_spacing <= 0:
        raise ValueError("line_spacing must be positive")
    if not isinstance(polygon, (Polygon, MultiPolygon)):
        raise TypeError("polygon must be a shapely Polygon or MultiPolygon")
    cells = decompose(polygon)
    adj = _adjacency(cells)
    options = [_variants(c, line_spacing) for c in cells]

    def best(idx, here):
        cands = options[idx]
        if here is None:
            return 0, cands[0]
        d = [np.linalg.norm(c[0] - here) for c in cands]
        k = int(np.argmin(d))
        return d[k], cands[k]

    visited = [False] * len(cells)
    order = []
    here = None if start is None else np.asarray(start, float)
    stack: list = []
    while len(order) < len(cells):
        frontier = []
        while stack and not frontier:
            frontier = [j for j in adj[stack[-1]] if not visited[j]]
            if not frontier:
                stack.pop()
        if not frontier:
            frontier = [j for j in range(len(cells)) if not visited[j]]
            if here is None:
                frontier = [min(frontier, key=lambda j: (cells[j].y_min, cells[j].span(cells[j].y_min)[0]))]
        scored = [(best(j, here)[0], j) for j in frontier]
        _, nxt = min(scored)
        _, pts = best(nxt, here)
        visited[nxt] = True
        order.append(pts)
        stack.append(nxt)
        here = pts[-1]
    return [Stroke(p, kind=INFILL, paint=True, color=color) for p in order]
