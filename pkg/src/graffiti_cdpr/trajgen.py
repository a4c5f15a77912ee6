"""Fixed-rate time parameterization of a PaintPath."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from graffiti_cdpr.strokes import OUTLINE, TRAVEL, PaintPath, Stroke


@dataclass(frozen=True)
class Limits:
    v_max: float
    a_max: float

    def __post_init__(self):
        if self.v_max <= 0 or self.a_max <= 0:
            raise ValueError("limits must be positive")


@dataclass(frozen=True)
class LimitSet:
    """Speed/acceleration limits per stroke class, tuned for paint dispersion."""

    outline: Limits = field(default_factory=lambda: Limits(1.2, 20.0))
    infill_travel: Limits = field(default_factory=lambda: Limits(0.5, 20.0))

    def for_kind(self, kind: str) -> Limits:
        return self.outline if kind == OUTLINE else self.infill_travel


@dataclass(frozen=True)
class StrokeKinematics:
    times: np.ndarray
    velocity: np.ndarray  # per vertex
    acceleration: np.ndarray  # per vertex
    segment_speed: np.ndarray

    @property
    def peak_speed(self) -> float:
        return float(self.segment_speed.max(initial=0.0))

    @property
    def peak_accel(self) -> float:
        return float(np.linalg.norm(self.acceleration, axis=1).max(initial=0.0))


def naive_kinematics(stroke: Stroke, times=None) -> StrokeKinematics:
    """Finite-difference kinematics, one second per segment unless timed.

    Vertex velocities and accelerations are second-order central differences
    (one-sided at the ends); segment speeds are chord length over duration.
    """
    pts = stroke.points
    if times is None:
        times = stroke.vertex_times if stroke.vertex_times is not None else np.arange(len(pts), dtype=float)
    times = np.asarray(times, dtype=float)
    vel = np.gradient(pts, times, axis=0)
    acc = np.gradient(vel, times, axis=0) if len(pts) > 2 else np.zeros_like(pts)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1) / np.diff(times)
    return StrokeKinematics(times, vel, acc, seg)


@dataclass(frozen=True)
class ScaledTiming:
    factor: float
    times: np.ndarray  # vertex times after scaling, starting at 0

    @property
    def duration(self) -> float:
        return float(self.times[-1])


def time_scale(stroke: Stroke, limits: Limits) -> ScaledTiming:
    """Slow a stroke uniformly (t' = c t) until it respects ``limits``."""
    if stroke.length <= 0.0:
        raise ValueError("zero-length stroke")
    kin = naive_kinematics(stroke)
    c = max(kin.peak_speed / limits.v_max, math.sqrt(kin.peak_accel / limits.a_max), 1.0)
    return ScaledTiming(c, c * (kin.times - kin.times[0]))


@dataclass(frozen=True)
class TrapezoidProfile:
    """Rest-to-rest scalar motion with bounded speed and acceleration."""

    distance: float
    v_peak: float
    a_max: float
    t_acc: float
    t_cruise: float

    @property
    def total(self) -> float:
        return 2.0 * self.t_acc + self.t_cruise

    def position(self, t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, self.total)
        a, v, ta, tc = self.a_max, self.v_peak, self.t_acc, self.t_cruise
        return np.select(
            [t < ta, t < ta + tc],
            [0.5 * a * t**2, 0.5 * a * ta**2 + v * (t - ta)],
            self.distance - 0.5 * a * (self.total - t) ** 2,
        )

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        a, v, ta, tc = self.a_max, self.v_peak, self.t_acc, self.t_cruise
        out = np.where(t < ta, a * t, np.where(t < ta + tc, v, a * (self.total - t)))
        return np.where((t <= 0) | (t >= self.total), 0.0, out)


def trapezoid_profile(distance: float, v_max: float, a_max: float) -> TrapezoidProfile:
    if distance < 0:
        raise ValueError("negative distance")
    if v_max <= 0 or a_max <= 0:
        raise ValueError("limits must be positive")
    if distance == 0:
        return TrapezoidProfile(0.0, 0.0, a_max, 0.0, 0.0)
    if distance >= v_max**2 / a_max:
        t_acc = v_max / a_max
        return TrapezoidProfile(distance, v_max, a_max, t_acc, distance / v_max - t_acc)
    v_peak = math.sqrt(distance * a_max)
    return TrapezoidProfile(distance, v_peak, a_max, v_peak / a_max, 0.0)


@dataclass
class TimedTrajectory:
    """Desired state samples at a fixed rate; sample ``k`` is at ``k * dt``."""

    dt: float
    positions: np.ndarray
    velocities: np.ndarray
    paint: np.ndarray
    kinds: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.velocities = np.asarray(self.velocities, dtype=float).reshape(-1, 2)
        self.paint = np.asarray(self.paint, dtype=bool).ravel()
        n = len(self.positions)
        if n == 0:
            raise ValueError("empty trajectory")
        if len(self.velocities) != n or len(self.paint) != n:
            raise ValueError("trajectory arrays must have equal length")
        if self.kinds is not None:
            self.kinds = np.asarray(self.kinds)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    @property
    def states(self) -> np.ndarray:
        return np.hstack([self.positions, self.velocities])

    @property
    def duration(self) -> float:
        return (len(self) - 1) * self.dt

    def to_csv(self, path) -> None:
        data = np.column_stack([self.times, self.positions, self.velocities, self.paint.astype(int)])
        lines = ["t,px,py,vx,vy,paint"]
        lines += [f"{r[0]!r},{r[1]!r},{r[2]!r},{r[3]!r},{r[4]!r},{int(r[5])}" for r in data.tolist()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "TimedTrajectory":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = data[:, 0]
        dt = float(t[1] - t[0]) if len(t) > 1 else 0.01
        if len(t) > 1 and not np.allclose(np.diff(t), dt, rtol=0, atol=1e-9):
            raise ValueError(f"{path}: samples are not uniformly spaced")
        return cls(dt, data[:, 1:3], data[:, 3:5], data[:, 5] > 0.5)


def _merge_collinear(points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    keep = [points[0]]
    for i in range(1, len(points) - 1):
        a, b, c = keep[-1], points[i], points[i + 1]
        ab, bc = b - a, c - b
        if np.linalg.norm(ab) <= tol:
            continue
        cross = ab[0] * bc[1] - ab[1] * bc[0]
        if abs(cross) <= tol * max(1.0, np.linalg.norm(ab) * np.linalg.norm(bc)) and ab @ bc > 0:
            continue
        keep.append(b)
    keep.append(points[-1])
    pts = np.array(keep)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    return np.vstack([pts[:1], pts[1:][seg > tol]]) if np.any(seg > tol) else pts[[0, -1]]


def _sample_outline(stroke: Stroke, limits: Limits, dt: float):
    timing = time_scale(stroke, limits)
    kin = naive_kinematics(stroke, timing.times)
    T = timing.duration
    n = math.ceil(T / dt - 1e-9)
    t = np.arange(n + 1) * dt
    t[-1] = T
    pos = np.column_stack([np.interp(t, timing.times, stroke.points[:, j]) for j in range(2)])
    vertex_vel = kin.velocity.copy()
    vertex_vel[[0, -1]] = 0.0
    vel = np.column_stack([np.interp(t, timing.times, vertex_vel[:, j]) for j in range(2)])
    pos[-1] = stroke.end
    return pos, vel


def _sample_rest_to_rest(stroke: Stroke, limits: Limits, dt: float):
    pts = _merge_collinear(stroke.points)
    pos_parts, vel_parts = [pts[:1]], [np.zeros((1, 2))]
    for a, b in zip(pts, pts[1:]):
        d = float(np.linalg.norm(b - a))
        if d == 0.0:
            continue
        prof = trapezoid_profile(d, limits.v_max, limits.a_max)
        n = math.ceil(prof.total / dt - 1e-9)
        t = np.arange(1, n + 1) * dt
        u = (b - a) / d
        s = prof.position(t)
        s[-1] = d
        v = prof.velocity(t)
        v[-1] = 0.0
        seg_pos = a + s[:, None] * u
        seg_pos[-1] = b
        pos_parts.append(seg_pos)
        vel_parts.append(v[:, None] * u)
    return np.vstack(pos_parts), np.vstack(vel_parts)


def discretize_stroke(stroke: Stroke, limits: LimitSet, dt: float = 0.01):
    """Sample one stroke; outlines keep their captured timing, others go rest-to-rest."""
    lim = limits.for_kind(stroke.kind)
    if stroke.kind == OUTLINE and stroke.length > 0:
        return _sample_outline(stroke, lim, dt)
    return _sample_rest_to_rest(stroke, lim, dt)


def discretize(path: PaintPath, limits: LimitSet | None = None, dt: float = 0.01,
               lead_in: float = 0.0) -> TimedTrajectory:
    """Concatenate per-stroke samples into one trajectory with rest at every junction.

    ``lead_in`` seconds of rest at the start position come first, so a
    latency-compensated paint command for the first stroke can be issued in time.
    """
    limits = limits or LimitSet()
    if not path.strokes:
        raise ValueError("empty path")
    if lead_in < 0:
        raise ValueError("lead_in must be non-negative")
    pos, vel, paint, kinds = [], [], [], []
    n_rest = int(math.ceil(lead_in / dt - 1e-9))
    if n_rest:
        pos.append(np.tile(path.strokes[0].points[0], (n_rest, 1)))
        vel.append(np.zeros((n_rest, 2)))
        paint.append(np.zeros(n_rest, bool))
        kinds.append(np.full(n_rest, TRAVEL, dtype=object))
    for i, stroke in enumerate(path.strokes):
        p, v = discretize_stroke(stroke, limits, dt)
        if i > 0:
            p, v = p[1:], v[1:]
        pos.append(p)
        vel.append(v)
        paint.append(np.full(len(p), stroke.paint))
        kinds.append(np.full(len(p), stroke.kind, dtype=object))
    return TimedTrajectory(dt, np.vstack(pos), np.vstack(vel), np.concatenate(paint), np.concatenate(kinds))


def rest_trajectory(position, duration: float, dt: float = 0.01) -> TimedTrajectory:
    """Hold a single position for ``duration`` seconds."""
    n = int(round(duration / dt)) + 1
    return TimedTrajectory(dt, np.tile(np.asarray(position, float), (n, 1)), np.zeros((n, 2)), np.zeros(n, bool))


def square_reference(side: float = 0.5, v_max: float = 2.0, a_max: float = 20.0, duration: float = 10.0,
                     center=(0.0, 0.0), dt: float = 0.01) -> TimedTrajectory:
    """Repeated sharp-cornered square, rest-to-rest along each side."""
    cx, cy = center
    h = side / 2
    corners = np.array([[cx - h, cy - h], [cx + h, cy - h], [cx + h, cy + h], [cx - h, cy + h], [cx - h, cy - h]])
    lap = Stroke(corners, kind="travel", paint=True)
    lims = LimitSet(Limits(v_max, a_max), Limits(v_max, a_max))
    p, v = discretize_stroke(lap, lims, dt)
    lap_len = len(p) - 1
    laps = max(1, round(duration / (lap_len * dt)))
    pos = np.vstack([p] + [p[1:]] * (laps - 1))
    vel = np.vstack([v] + [v[1:]] * (laps - 1))
    return TimedTrajectory(dt, pos, vel, np.ones(len(pos), bool))
