"""Pulley-location and cable length-scale calibration from ground-truth poses."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from graffiti_cdpr import model as mdl
from graffiti_cdpr.model import RobotModel

logger = logging.getLogger(__name__)

MIN_SAMPLES = 12
MIN_EXTENT = 0.5


class CalibrationError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


@dataclass(frozen=True)
class CalibParams:
    """Pulley positions and per-cable measurement model ``l_meas = s * l + o``."""

    pulleys: np.ndarray
    scale: np.ndarray = field(default_factory=lambda: np.ones(4))
    offset: np.ndarray = field(default_factory=lambda: np.zeros(4))

    def __post_init__(self):
        for name, shape in (("pulleys", (4, 2)), ("scale", (4,)), ("offset", (4,))):
            arr = np.array(getattr(self, name), dtype=float).reshape(shape)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_model(cls, model: RobotModel) -> "CalibParams":
        return cls(model.pulleys.copy())

    def check_bounds(self, model: RobotModel) -> None:
        if np.any(self.scale <= 0.5) or np.any(self.scale >= 2.0):
            raise ValueError("length scales must lie in (0.5, 2)")
        f = model.frame
        lim = 2 * np.array([max(abs(f.xmin), abs(f.xmax)), max(abs(f.ymin), abs(f.ymax))])
        if np.any(np.abs(self.pulleys) > lim):
            raise ValueError("pulleys must lie within twice the frame bounds")

    def vector(self) -> np.ndarray:
        return np.concatenate([self.pulleys.ravel(), self.scale, self.offset])

    @classmethod
    def from_vector(cls, v) -> "CalibParams":
        v = np.asarray(v, float)
        return cls(v[:8].reshape(4, 2), v[8:12], v[12:16])

    def apply(self, model: RobotModel) -> RobotModel:
        return model.replace(pulleys=self.pulleys.copy())

    def true_lengths(self, measured) -> np.ndarray:
        """Invert the measurement model."""
        return (np.asarray(measured, float) - self.offset) / self.scale

    def to_dict(self) -> dict:
        return {"pulleys": self.pulleys.tolist(), "length_scale": self.scale.tolist(),
                "length_offset": self.offset.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibParams":
        return cls(d["pulleys"], d.get("length_scale", np.ones(4)), d.get("length_offset", np.zeros(4)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "CalibParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class CalibLog:
    t: np.ndarray
    poses: np.ndarray  # (N, 3) as (x, y, theta)
    lengths: np.ndarray  # (N, 4)

    def __post_init__(self):
        self.t = np.asarray(self.t, float).ravel()
        self.poses = np.asarray(self.poses, float).reshape(-1, 3)
        self.lengths = np.asarray(self.lengths, float).reshape(-1, 4)
        if not (len(self.t) == len(self.poses) == len(self.lengths)):
            raise ValueError("log columns differ in length")

    def __len__(self) -> int:
        return len(self.t)

    def check_excitation(self) -> None:
        extent = np.ptp(self.poses[:, :2], axis=0) if len(self) else np.zeros(2)
        if len(self) < MIN_SAMPLES or np.any(extent < MIN_EXTENT):
            raise CalibrationError(
                f"insufficient excitation: need >= {MIN_SAMPLES} samples spanning "
                f"{MIN_EXTENT} x {MIN_EXTENT} m (got {len(self)} over {extent[0]:.3g} x {extent[1]:.3g} m)")

    def to_csv(self, path) -> None:
        rows = np.column_stack([self.t, self.poses, self.lengths])
        lines = ["t,x,y,theta,l1,l2,l3,l4"] + [",".join(repr(v) for v in r) for r in rows.tolist()]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "CalibLog":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != 8:
            raise ValueError(f"{path}: expected columns t,x,y,theta,l1..l4")
        return cls(data[:, 0], data[:, 1:4], data[:, 4:8])


def _geometry(params: CalibParams, log: CalibLog, model: RobotModel):
    x, y, th = log.poses.T
    c, s = np.cos(th), np.sin(th)
    b = model.mounts
    mount_w = np.stack([x[:, None] + c[:, None] * b[:, 0] - s[:, None] * b[:, 1],
                        y[:, None] + s[:, None] * b[:, 0] + c[:, None] * b[:, 1]], axis=-1)
    r = mount_w - params.pulleys[None]
    l = np.linalg.norm(r, axis=-1)
    if np.any(l < 1e-6):
        raise mdl.DegenerateCableError("degenerate cable at a calibration sample")
    return r, l


def residuals(params: CalibParams, log: CalibLog, model: RobotModel | None = None) -> np.ndarray:
    """``measured - (s * ||pose o b_i - a_i|| + o)`` stacked sample-major."""
    model = model or RobotModel()
    _, l = _geometry(params, log, model)
    return (log.lengths - (params.scale * l + params.offset)).ravel()


def _jacobian(params: CalibParams, log: CalibLog, model: RobotModel) -> np.ndarray:
    r, l = _geometry(params, log, model)
    u = r / l[..., None]
    n = len(log)
    J = np.zeros((n, 4, 16))
    for i in range(4):
        J[:, i, 2 * i:2 * i + 2] = params.scale[i] * u[:, i]
        J[:, i, 8 + i] = -l[:, i]
        J[:, i, 12 + i] = -1.0
    return J.reshape(n * 4, 16)


@dataclass
class CalibResult:
    params: CalibParams
    cost: float
    iterations: int
    converged: bool
    costs: list


def _reduction(fit_offset: bool, tie_scale: bool) -> np.ndarray:
    """Matrix mapping free parameters to the full 16-vector."""
    cols = [np.eye(16)[:, k] for k in range(8)]
    if tie_scale:
        cols.append(np.r_[np.zeros(8), np.ones(4), np.zeros(4)])
    else:
        cols += [np.eye(16)[:, 8 + k] for k in range(4)]
    if fit_offset:
        cols += [np.eye(16)[:, 12 + k] for k in range(4)]
    return np.column_stack(cols)


def calibrate(log: CalibLog, initial: CalibParams, model: RobotModel | None = None, *,
              fit_offset: bool = True, tie_scale: bool = False, max_iterations: int = 100,
              rel_tol: float = 1e-10, lam0: float = 1e-3) -> CalibResult:
    """Levenberg-Marquardt fit of pulleys, scales and (optionally) offsets.

    Cost is ``||r||^2``.  Stops when an accepted step lowers the cost by less
    than ``rel_tol`` relative, or after ``max_iterations``.
    """
    model = model or RobotModel()
    log.check_excitation()
    initial.check_bounds(model)
    P = _reduction(fit_offset, tie_scale)
    free = np.any(P != 0, axis=1)
    fixed = np.where(free, 0.0, initial.vector())  # frozen entries keep their initial values
    z = np.linalg.lstsq(P, np.where(free, initial.vector(), 0.0), rcond=None)[0]

    def unpack(z):
        return CalibParams.from_vector(fixed + P @ z)

    params = unpack(z)
    r = residuals(params, log, model)
    cost = float(r @ r)
    J = _jacobian(params, log, model) @ P
    if np.linalg.matrix_rank(J) < J.shape[1]:
        raise CalibrationError("insufficient excitation: rank-deficient Jacobian")
    costs = [cost]
    lam = lam0
    converged = cost <= 1e-30
    it = 0
    while not converged and it < max_iterations:
        it += 1
        JtJ = J.T @ J
        g = J.T @ r
        while True:
            step = np.linalg.solve(JtJ + lam * np.diag(np.diag(JtJ)), -g)
            trial = unpack(z + step)
            try:
                r_new = residuals(trial, log, model)
                new_cost = float(r_new @ r_new)
            except mdl.DegenerateCableError:
                new_cost = np.inf
            if new_cost <= cost:
                break
            lam *= 10.0
            if lam > 1e16:
                converged = True  # no descent direction left at machine precision
                break
        if new_cost > cost:
            break
        decrease = (cost - new_cost) / max(cost, 1e-300)
        z = z + step
        params, r, cost = trial, r_new, new_cost
        costs.append(cost)
        J = _jacobian(params, log, model) @ P
        lam = max(lam / 10.0, 1e-12)
        if decrease < rel_tol or cost <= 1e-30:
            converged = True
    result = CalibResult(params, cost, it, converged, costs)
    if not converged:
        raise CalibrationError(f"calibration did not converge in {max_iterations} iterations "
                               f"(final cost {cost:.3e})", result)
    return result


def rectangle_poses(model: RobotModel | None = None, n: int = 500, width: float = 0.8, height: float = 0.6,
                    center=(0.0, 0.0)) -> np.ndarray:
    """Poses (x, y, 0) evenly spaced along a rectangle's perimeter."""
    cx, cy = center
    w, h = width / 2, height / 2
    corners = np.array([[cx - w, cy - h], [cx + w, cy - h], [cx + w, cy + h], [cx - w, cy + h], [cx - w, cy - h]])
    seg = np.linalg.norm(np.diff(corners, axis=0), axis=1)
    s = np.linspace(0, seg.sum(), n, endpoint=False)
    cum = np.concatenate([[0], np.cumsum(seg)])
    xy = np.column_stack([np.interp(s, cum, corners[:, k]) for k in range(2)])
    return np.column_stack([xy, np.zeros(n)])


def synthetic_log(params: CalibParams, model: RobotModel | None = None, poses=None, noise_std: float = 0.0,
                  seed: int = 0, rate: float = 100.0) -> CalibLog:
    """Lengths a robot with ``params`` would report along ``poses``."""
    model = model or RobotModel()
    poses = rectangle_poses(model) if poses is None else np.asarray(poses, float)
    t = np.arange(len(poses)) / rate
    log = CalibLog(t, poses, np.zeros((len(poses), 4)))
    _, l = _geometry(params, log, model)
    meas = params.scale * l + params.offset
    if noise_std:
        meas = meas + np.random.default_rng(seed).normal(0.0, noise_std, meas.shape)
    return CalibLog(t, poses, meas)


class CableCalibrator(BaseEstimator):
    """Estimator wrapper: ``X`` are poses (x, y, theta), ``y`` measured lengths."""

    def __init__(self, model=None, fit_offset=True, tie_scale=False, max_iterations=100, rel_tol=1e-10):
        self.model = model
        self.fit_offset = fit_offset
        self.tie_scale = tie_scale
        self.max_iterations = max_iterations
        self.rel_tol = rel_tol

    def fit(self, X, y, initial: CalibParams | None = None):
        model = self.model or RobotModel()
        X = np.asarray(X, float)
        log = CalibLog(np.arange(len(X), dtype=float), X, y)
        res = calibrate(log, initial or CalibParams.from_model(model), model, fit_offset=self.fit_offset,
                        tie_scale=self.tie_scale, max_iterations=self.max_iterations, rel_tol=self.rel_tol)
        self.params_ = res.params
        self.cost_ = res.cost
        self.n_iter_ = res.iterations
        self.costs_ = res.costs
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        model = self.model or RobotModel()
        X = np.asarray(X, float)
        log = CalibLog(np.arange(len(X), dtype=float), X, np.zeros((len(X), 4)))
        _, l = _geometry(self.params_, log, model)
        return self.params_.scale * l + self.params_.offset

    def score(self, X, y) -> float:
        """Negative RMS length residual."""
        err = np.asarray(y, float) - self.predict(X)
        return -float(np.sqrt(np.mean(err**2)))
