"""Closed-loop execution of a ControlSchedule against the full planar plant."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from graffiti_cdpr import model as mdl
from graffiti_cdpr.model import RobotModel
from graffiti_cdpr.optimizer import ControlSchedule


class EstimationError(ValueError):
    """Sensor readings are geometrically inconsistent."""


class PlantDivergenceError(RuntimeError):
    pass


@dataclass
class RuntimeConfig:
    control_rate: float = 1000.0
    encoder_noise_std: float = 0.0
    rate_noise_std: float = 0.0
    initial_pose: tuple | None = None
    paint_latency: float = 0.4
    sim_substeps: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.control_rate <= 0 or self.sim_substeps < 1:
            raise ValueError("control_rate and sim_substeps must be positive")
        if self.encoder_noise_std < 0 or self.rate_noise_std < 0 or self.paint_latency < 0:
            raise ValueError("noise levels and latency must be non-negative")


def _step_index(schedule: ControlSchedule, t: float) -> int:
    n = len(schedule)
    if t < -1e-12 or t > schedule.duration + schedule.dt + 1e-12:
        raise ValueError(f"t={t} outside schedule span [0, {schedule.duration}]")
    return min(max(int(math.floor(t / schedule.dt + 1e-9)), 0), n - 1)


def interpolate_schedule(schedule: ControlSchedule, t: float):
    """Zero-order hold on ``K`` and ``u_ff``; first-order extrapolation of ``x_ff``.

    Past the last step (the final partial tick) the last step is held.
    """
    k = _step_index(schedule, t)
    x = schedule.x_ff[k]
    tau = t - k * schedule.dt if k < len(schedule) - 1 else 0.0
    x_t = np.concatenate([x[:2] + tau * x[2:], x[2:]])
    return x_t, schedule.u_ff[k], schedule.K[k]


def scheduled_paint(schedule: ControlSchedule, t: float) -> bool:
    if t < 0:
        return False
    k = min(int(math.floor(t / schedule.dt + 1e-9)), len(schedule) - 1)
    return bool(schedule.paint[k])


def estimate_position(model: RobotModel, lengths) -> np.ndarray:
    """Intersect the two top-cable circles, assuming the end effector is upright."""
    i, j = mdl.TOP_CABLES
    c1 = model.pulleys[i] - model.mounts[i]
    c2 = model.pulleys[j] - model.mounts[j]
    r1, r2 = float(lengths[i]), float(lengths[j])
    d_vec = c2 - c1
    d = float(np.linalg.norm(d_vec))
    slack = 1e-6
    if d < 1e-12 or d > r1 + r2 + slack or d < abs(r1 - r2) - slack:
        raise EstimationError("inconsistent lengths: top-cable circles do not intersect")
    a = (r1**2 - r2**2 + d**2) / (2 * d)
    h2 = r1**2 - a**2
    h = math.sqrt(h2) if h2 > 0 else 0.0
    e = d_vec / d
    base = c1 + a * e
    normal = np.array([-e[1], e[0]])
    cand = (base + h * normal, base - h * normal)
    # the pulley line runs between the two centres; take the lower solution
    return max(cand, key=lambda p: (p - c1) @ _downward(e))


def _downward(e):
    n = np.array([-e[1], e[0]])
    return -n if n[1] > 0 else n


def estimate_velocity(model: RobotModel, position, ldot) -> np.ndarray:
    """Least-squares twist from cable rates: ``ldot = -W^T pdot``."""
    pose = (0.0, position[0], position[1]) if len(position) == 2 else position
    Wt = mdl.wrench_matrix(model, pose)[1:]
    if np.linalg.matrix_rank(Wt) < 2:
        raise EstimationError("rank-deficient wrench matrix")
    return np.linalg.lstsq(-Wt.T, np.asarray(ldot, float), rcond=None)[0]


def control_step(schedule: ControlSchedule, t: float, x_hat) -> np.ndarray:
    x_ff, u_ff, K = interpolate_schedule(schedule, t)
    return K @ (x_ff - np.asarray(x_hat, float)) + u_ff


LOG_COLUMNS = (["t", "x", "y", "theta", "vx", "vy", "omega", "xhat_px", "xhat_py", "xhat_vx", "xhat_vy",
                "xff_px", "xff_py", "xff_vx", "xff_vy"] + [f"tau{i}" for i in range(1, 5)]
               + [f"t{i}" for i in range(1, 5)] + ["paint_cmd", "paint_on"])


@dataclass
class SimulationLog:
    t: np.ndarray
    pose: np.ndarray  # (N,3) theta, x, y
    twist: np.ndarray  # (N,3) omega, vx, vy
    x_hat: np.ndarray  # (N,4)
    x_ff: np.ndarray  # (N,4)
    torques: np.ndarray  # (N,4)
    tensions: np.ndarray  # (N,4)
    paint_cmd: np.ndarray
    paint_on: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @property
    def positions(self) -> np.ndarray:
        return self.pose[:, 1:]

    def table(self) -> np.ndarray:
        return np.column_stack([
            self.t, self.pose[:, 1], self.pose[:, 2], self.pose[:, 0], self.twist[:, 1], self.twist[:, 2],
            self.twist[:, 0], self.x_hat, self.x_ff, self.torques, self.tensions,
            self.paint_cmd.astype(float), self.paint_on.astype(float)])

    def to_csv(self, path) -> None:
        lines = [",".join(LOG_COLUMNS)]
        for row in self.table().tolist():
            lines.append(",".join([repr(v) for v in row[:-2]] + [str(int(row[-2])), str(int(row[-1]))]))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "SimulationLog":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != len(LOG_COLUMNS):
            raise ValueError(f"{path}: expected {len(LOG_COLUMNS)} columns")
        return cls(
            t=data[:, 0], pose=data[:, [3, 1, 2]], twist=data[:, [6, 4, 5]], x_hat=data[:, 7:11],
            x_ff=data[:, 11:15], torques=data[:, 15:19], tensions=data[:, 19:23],
            paint_cmd=data[:, 23] > 0.5, paint_on=data[:, 24] > 0.5)


def simulate(model: RobotModel, schedule: ControlSchedule, config: RuntimeConfig | None = None,
             plant: RobotModel | None = None) -> SimulationLog:
    """Run the sense-estimate-control-integrate loop at ``config.control_rate``.

    ``plant`` defaults to ``model``; pass a different one to study model error.
    The paint command is issued ``paint_latency`` ahead of the schedule so the
    nozzle actually sprays on the scheduled intervals.
    """
    cfg = config or RuntimeConfig()
    plant = plant or model
    if cfg.control_rate < 10.0 / schedule.dt - 1e-9:
        raise ValueError("control_rate must be at least 10x the schedule rate")
    rng = np.random.default_rng(cfg.seed)
    tick = 1.0 / cfg.control_rate
    h = tick / cfg.sim_substeps
    n = int(round(schedule.duration / tick)) + 1
    frame = plant.frame
    bound_x = 2 * max(abs(frame.xmin), abs(frame.xmax))
    bound_y = 2 * max(abs(frame.ymin), abs(frame.ymax))

    if cfg.initial_pose is not None:
        pose = np.array(cfg.initial_pose, dtype=float)
    else:
        pose = np.array([0.0, *schedule.x_ff[0, :2]])
    twist = np.zeros(3)
    tension = np.zeros(4)

    log = {k: np.zeros((n,) + s) for k, s in
           [("pose", (3,)), ("twist", (3,)), ("x_hat", (4,)), ("x_ff", (4,)), ("tau", (4,)), ("ten", (4,))]}
    cmd_hist = np.zeros(n, dtype=bool)
    t_axis = np.arange(n) * tick
    lat_ticks = int(round(cfg.paint_latency / tick))

    for i in range(n):
        t = t_axis[i]
        W = mdl.wrench_matrix(plant, pose)
        _, lengths, _ = mdl.cable_vectors(plant, pose)
        ldot = -W.T @ twist
        if cfg.encoder_noise_std:
            lengths = lengths + rng.normal(0.0, cfg.encoder_noise_std, 4)
        if cfg.rate_noise_std:
            ldot = ldot + rng.normal(0.0, cfg.rate_noise_std, 4)
        p_hat = estimate_position(model, lengths)
        v_hat = estimate_velocity(model, p_hat, ldot)
        x_hat = np.concatenate([p_hat, v_hat])
        x_ff, u_ff, K = interpolate_schedule(schedule, t)
        tau = K @ (x_ff - x_hat) + u_ff
        cmd_hist[i] = scheduled_paint(schedule, t + cfg.paint_latency)

        log["pose"][i] = pose
        log["twist"][i] = twist
        log["x_hat"][i] = x_hat
        log["x_ff"][i] = x_ff
        log["tau"][i] = tau

        for _ in range(cfg.sim_substeps):
            vdot, tension, _ = mdl.forward_dynamics(plant, pose, twist, tau)
            twist = twist + h * vdot
            pose = pose + h * twist
        log["ten"][i] = tension
        if abs(pose[1]) > bound_x or abs(pose[2]) > bound_y or not np.all(np.isfinite(pose)):
            raise PlantDivergenceError(f"plant diverged at t={t:.3f}s")

    paint_on = np.zeros(n, dtype=bool)
    if lat_ticks < n:
        paint_on[lat_ticks:] = cmd_hist[: n - lat_ticks]
    return SimulationLog(t_axis, log["pose"], log["twist"], log["x_hat"], log["x_ff"], log["tau"], log["ten"],
                         cmd_hist, paint_on)


@dataclass(frozen=True)
class Metrics:
    tracking_rmse: float
    estimation_rmse: float
    rotation_rms_deg: float

    def as_dict(self) -> dict:
        return {"tracking_rmse_m": self.tracking_rmse, "estimation_rmse_m": self.estimation_rmse,
                "rotation_rms_deg": self.rotation_rms_deg}


def _rms_norm(err) -> float:
    return float(np.sqrt(np.mean(np.sum(np.atleast_2d(err) ** 2, axis=-1))))


def metrics(log: SimulationLog, schedule: ControlSchedule | None = None, ground_truth_rate: float = 100.0) -> Metrics:
    """Tracking, estimation and rotation errors on a resampled time grid.

    Every logged signal is resampled with a piecewise-cubic interpolant onto
    a ``ground_truth_rate`` grid before taking RMS values.
    """
    if len(log) == 0:
        raise ValueError("empty log")
    t_end = log.t[-1] if schedule is None else min(log.t[-1], schedule.duration)
    grid = np.arange(int(math.floor(t_end * ground_truth_rate + 1e-9)) + 1) / ground_truth_rate
    if len(log) < 2:
        truth, x_hat, x_ff, theta = log.positions, log.x_hat[:, :2], log.x_ff[:, :2], log.pose[:, 0]
    else:
        def resample(y):
            return CubicSpline(log.t, y, axis=0)(grid)
        truth = resample(log.positions)
        x_hat = resample(log.x_hat[:, :2])
        x_ff = resample(log.x_ff[:, :2])
        theta = resample(log.pose[:, 0])
    return Metrics(_rms_norm(x_ff - truth), _rms_norm(x_hat - truth),
                   float(np.degrees(np.sqrt(np.mean(theta**2)))))


def painted_length(log: SimulationLog) -> float:
    """Arc length travelled by the true nozzle position while paint is on."""
    on = log.paint_on[1:] & log.paint_on[:-1]
    seg = np.linalg.norm(np.diff(log.positions, axis=0), axis=1)
    return float(seg[on].sum())
