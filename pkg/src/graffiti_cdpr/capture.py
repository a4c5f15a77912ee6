"""Motion-capture ingestion: marker tracks, rigid frames and stroke segmentation.

The mocap CSV has a ``time`` column followed by ``<marker>_x,<marker>_y,<marker>_z``
triples.  The can pose may instead come pre-fused as ``can_qw..can_qz`` and
``can_tx..can_tz`` columns; ``finger_y`` is an optional scalar column.  An empty
cell marks a gap for that marker at that time.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from graffiti_cdpr.strokes import OUTLINE, TRAVEL, Stroke

SURFACE_MARKERS = ("surf_bl", "surf_br", "surf_tl")
CAN_MARKERS = ("can_m1", "can_m2", "can_m3")
CAN_QUAT = ("can_qw", "can_qx", "can_qy", "can_qz")
CAN_TRANS = ("can_tx", "can_ty", "can_tz")
FINGER = "finger_y"


class MocapFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MarkerTrack:
    """Samples of one labelled marker; rows with NaN are gaps."""

    marker_id: str
    times: np.ndarray
    positions: np.ndarray  # (N, 3), NaN where missing
    sample_rate: float = 120.0

    def __post_init__(self):
        t = np.asarray(self.times, float).ravel()
        p = np.asarray(self.positions, float).reshape(-1, 3)
        if len(t) != len(p):
            raise ValueError("times and positions differ in length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("non-monotonic time")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", p)

    @property
    def gaps(self) -> np.ndarray:
        return ~np.all(np.isfinite(self.positions), axis=1)

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class MocapRecording:
    times: np.ndarray
    tracks: dict
    can_pose: tuple | None = None  # (quaternions (N,4) wxyz, translations (N,3))
    finger_y: np.ndarray | None = None


def _float_cell(cell: str, row: int, col: str) -> float:
    cell = cell.strip()
    if cell == "":
        return math.nan
    try:
        return float(cell)
    except ValueError:
        raise MocapFormatError(f"non-numeric cell {cell!r} in row {row}, column {col}") from None


def _header_layout(header: list) -> tuple:
    if not header or header[0].strip() != "time":
        raise MocapFormatError("malformed header: first column must be 'time'")
    names = [h.strip() for h in header]
    if len(set(names)) != len(names):
        raise MocapFormatError("malformed header: duplicate column")
    markers = {}
    special = {}
    for j, name in enumerate(names[1:], start=1):
        if name in CAN_QUAT + CAN_TRANS or name == FINGER:
            special[name] = j
            continue
        base, _, axis = name.rpartition("_")
        if not base or axis not in ("x", "y", "z"):
            raise MocapFormatError(f"malformed header: column {name!r}")
        markers.setdefault(base, {})[axis] = j
    for base, axes in markers.items():
        if set(axes) != {"x", "y", "z"}:
            raise MocapFormatError(f"malformed header: marker {base!r} lacks x/y/z columns")
    quat = [c in special for c in CAN_QUAT]
    trans = [c in special for c in CAN_TRANS]
    if any(quat + trans) and not all(quat + trans):
        raise MocapFormatError("malformed header: incomplete can pose columns")
    return markers, special


def read_mocap(path, sample_rate: float = 120.0) -> MocapRecording:
    """Parse a mocap CSV into marker tracks plus optional can pose / finger columns."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MocapFormatError("malformed header: empty file")
    markers, special = _header_layout(rows[0])
    names = [h.strip() for h in rows[0]]
    data = []
    for i, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(names):
            raise MocapFormatError(f"row {i} has {len(row)} cells, expected {len(names)}")
        data.append([_float_cell(c, i, names[j]) for j, c in enumerate(row)])
    data = np.array(data, dtype=float).reshape(-1, len(names))
    times = data[:, 0]
    if np.any(~np.isfinite(times)):
        raise MocapFormatError("missing time value")
    if np.any(np.diff(times) <= 0):
        raise MocapFormatError("non-monotonic time")
    tracks = {
        base: MarkerTrack(base, times, data[:, [axes["x"], axes["y"], axes["z"]]], sample_rate)
        for base, axes in markers.items()
    }
    can_pose = None
    if CAN_QUAT[0] in special:
        can_pose = (data[:, [special[c] for c in CAN_QUAT]], data[:, [special[c] for c in CAN_TRANS]])
    finger = data[:, special[FINGER]] if FINGER in special else None
    return MocapRecording(times, tracks, can_pose, finger)


def parse_mocap_csv(path) -> list:
    return list(read_mocap(path).tracks.values())


@dataclass(frozen=True)
class RigidFrame:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), rtol=0, atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidFrame":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, q, translation) -> "RigidFrame":
        w, x, y, z = np.asarray(q, float) / np.linalg.norm(q)
        R = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ])
        return cls(R, translation)

    def __matmul__(self, other: "RigidFrame") -> "RigidFrame":
        return RigidFrame(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidFrame":
        return RigidFrame(self.rotation.T, -self.rotation.T @ self.translation)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, float) @ self.rotation.T + self.translation


def surface_frame(bl, br, tl) -> RigidFrame:
    """Frame at ``bl`` with x towards ``br`` and y towards ``tl`` (Gram-Schmidt)."""
    bl, br, tl = (np.asarray(v, float) for v in (bl, br, tl))
    u, w = br - bl, tl - bl
    if np.linalg.norm(np.cross(u, w)) < 1e-9:
        raise ValueError("collinear markers")
    x = u / np.linalg.norm(u)
    y = w - (w @ x) * x
    y /= np.linalg.norm(y)
    return RigidFrame(np.column_stack([x, y, np.cross(x, y)]), bl)


def nozzle_in_surface(wTs: RigidFrame, wTc: RigidFrame, cTn: RigidFrame) -> RigidFrame:
    return wTs.inverse() @ wTc @ cTn


@dataclass(frozen=True)
class NozzleTrace:
    """Nozzle poses in the painting-surface frame, one per gap-free mocap row."""

    times: np.ndarray
    frames: tuple
    finger_y: np.ndarray | None = None
    source_rows: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, float).ravel()
        if len(t) != len(self.frames):
            raise ValueError("times and frames differ in length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("non-monotonic time")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.finger_y is not None:
            object.__setattr__(self, "finger_y", np.asarray(self.finger_y, float).ravel())

    def __len__(self) -> int:
        return len(self.times)

    @property
    def positions(self) -> np.ndarray:
        """In-plane nozzle positions (N, 2)."""
        return np.array([f.translation[:2] for f in self.frames]).reshape(-1, 2)

    @classmethod
    def from_positions(cls, times, positions, finger_y=None) -> "NozzleTrace":
        pts = np.asarray(positions, float)
        pts3 = np.column_stack([pts, np.zeros(len(pts))]) if pts.shape[1] == 2 else pts
        return cls(times, tuple(RigidFrame(np.eye(3), p) for p in pts3), finger_y)

    def concatenate(self, other: "NozzleTrace") -> "NozzleTrace":
        finger = None
        if self.finger_y is not None and other.finger_y is not None:
            finger = np.concatenate([self.finger_y, other.finger_y])
        return NozzleTrace(np.concatenate([self.times, other.times]), self.frames + other.frames, finger)


def nozzle_trace(recording: MocapRecording, cTn: RigidFrame | None = None) -> NozzleTrace:
    """Nozzle poses in the surface frame; rows missing any required marker are dropped.

    The can frame comes from the pre-fused pose columns when present, otherwise
    from the ``can_m1..can_m3`` markers with the same construction as the surface.
    """
    cTn = cTn or RigidFrame.identity()
    missing = [m for m in SURFACE_MARKERS if m not in recording.tracks]
    if recording.can_pose is None:
        missing += [m for m in CAN_MARKERS if m not in recording.tracks]
    if missing:
        raise MocapFormatError(f"missing required markers: {', '.join(missing)}")
    n = len(recording.times)
    ok = np.ones(n, dtype=bool)
    for m in SURFACE_MARKERS + (() if recording.can_pose is not None else CAN_MARKERS):
        ok &= ~recording.tracks[m].gaps
    if recording.can_pose is not None:
        q, t = recording.can_pose
        ok &= np.all(np.isfinite(q), axis=1) & np.all(np.isfinite(t), axis=1)
    if recording.finger_y is not None:
        ok &= np.isfinite(recording.finger_y)
    rows = np.flatnonzero(ok)
    frames = []
    tr = recording.tracks
    for k in rows:
        wTs = surface_frame(*(tr[m].positions[k] for m in SURFACE_MARKERS))
        if recording.can_pose is not None:
            wTc = RigidFrame.from_quaternion(recording.can_pose[0][k], recording.can_pose[1][k])
        else:
            wTc = surface_frame(*(tr[m].positions[k] for m in CAN_MARKERS))
        frames.append(nozzle_in_surface(wTs, wTc, cTn))
    finger = recording.finger_y[rows] if recording.finger_y is not None else None
    return NozzleTrace(recording.times[rows], tuple(frames), finger, rows)


# --- segmentation ------------------------------------------------------------------


@dataclass(frozen=True)
class SegmentationConfig:
    """Thresholds for splitting a nozzle trace into paint and travel strokes.

    ``nms_window`` is the minimum run length in samples; shorter label runs are
    flipped into their neighbours.  The finger is pressed while ``finger_y`` is
    below ``finger_y_threshold``.  ``manual_overrides`` holds
    ``((start, stop), paint)`` half-open sample ranges.
    """

    closure_dist_max: float = 0.02
    paint_speed_max: float = 6.0
    arclength_min: float = 0.1
    nms_window: int = 5
    finger_y_threshold: float | None = None
    manual_overrides: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if min(self.closure_dist_max, self.paint_speed_max, self.arclength_min) <= 0 or self.nms_window < 1:
            raise ValueError("segmentation thresholds must be positive")
        if self.finger_y_threshold is not None and self.finger_y_threshold <= 0:
            raise ValueError("segmentation thresholds must be positive")


def _runs(labels: np.ndarray) -> list:
    """Maximal constant runs as half-open ``(start, stop)`` pairs."""
    if len(labels) == 0:
        return []
    edges = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    bounds = np.concatenate([[0], edges, [len(labels)]])
    return list(zip(bounds[:-1].tolist(), bounds[1:].tolist()))


def suppress_short_runs(labels, window: int) -> np.ndarray:
    """Flip runs shorter than ``window`` (shortest first, earliest on ties)."""
    labels = np.array(labels, dtype=bool)
    while True:
        runs = _runs(labels)
        if len(runs) <= 1:
            return labels
        short = [(b - a, a, b) for a, b in runs if b - a < window]
        if not short:
            return labels
        _, a, b = min(short)
        labels[a:b] = ~labels[a:b]


def sample_speeds(trace: NozzleTrace) -> np.ndarray:
    """Central-difference in-plane speed at each sample."""
    pos = trace.positions
    if len(pos) < 2:
        return np.zeros(len(pos))
    return np.linalg.norm(np.gradient(pos, trace.times, axis=0), axis=1)


def segment_labels(trace: NozzleTrace, cfg: SegmentationConfig | None = None):
    """Partition of the trace into ``(start, stop)`` ranges and their paint flags."""
    cfg = cfg or SegmentationConfig()
    n = len(trace)
    if n == 0:
        raise ValueError("empty trace")
    if n < 2:
        raise ValueError("trace needs >=2 samples")
    pos = trace.positions
    slow = suppress_short_runs(sample_speeds(trace) <= cfg.paint_speed_max, cfg.nms_window)

    paint = np.zeros(n, dtype=bool)
    for a, b in _runs(slow):
        if not slow[a]:
            continue
        seg = pos[a:b]
        arc = float(np.sum(np.linalg.norm(np.diff(seg, axis=0), axis=1)))
        closed = np.linalg.norm(seg[-1] - seg[0]) <= cfg.closure_dist_max
        paint[a:b] = closed and arc >= cfg.arclength_min

    if cfg.finger_y_threshold is not None and trace.finger_y is not None:
        pressed = suppress_short_runs(trace.finger_y < cfg.finger_y_threshold, cfg.nms_window)
        paint |= pressed

    for (start, stop), flag in cfg.manual_overrides:
        paint[max(int(start), 0):min(int(stop), n)] = bool(flag)

    ranges = _runs(paint)
    # a stroke needs two samples: a lone sample joins the preceding run
    merged = []
    for a, b in ranges:
        if b - a < 2 and merged:
            merged[-1] = (merged[-1][0], b, merged[-1][2])
        elif merged and merged[-1][1] - merged[-1][0] < 2:
            merged[-1] = (merged[-1][0], b, bool(paint[a]))
        else:
            merged.append((a, b, bool(paint[a])))
    return [(a, b) for a, b, _ in merged], [f for _, _, f in merged]


def segment_strokes(trace: NozzleTrace, cfg: SegmentationConfig | None = None) -> list:
    """Split a nozzle trace into contiguous paint (outline) and travel strokes."""
    ranges, flags = segment_labels(trace, cfg)
    pos = trace.positions
    return [
        Stroke(pos[a:b], trace.times[a:b], paint=f, kind=OUTLINE if f else TRAVEL)
        for (a, b), f in zip(ranges, flags)
    ]
