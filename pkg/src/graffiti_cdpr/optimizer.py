"""Offline iLQR tracking: feedforward states/torques plus time-varying gains.

The tracking problem is

    min  sum_k (x_k - xd_k)^T Q (x_k - xd_k) + (u_k - u_m)^T R (u_k - u_m)
    s.t. x_{k+1} = f(x_k, u_k),  x_0 = xd_0 at rest

with ``x = (px, py, vx, vy)``, ``u`` the four winch torques and ``u_m`` the
middle of the allowed torque range.  Each iteration linearizes along the
current rollout, solves the time-varying LQ subproblem by a backward Riccati
sweep and rolls forward with a backtracking line search.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from graffiti_cdpr import model as mdl
from graffiti_cdpr.model import RobotModel
from graffiti_cdpr.trajgen import TimedTrajectory

logger = logging.getLogger(__name__)

NX = 4
NU = 4
LINE_SEARCH = tuple(0.5**i for i in range(7))  # 1 .. 1/64


class DivergenceError(RuntimeError):
    """Rollout cost became non-finite and regularization could not recover it."""


@dataclass
class ILQRConfig:
    Q: np.ndarray = field(default_factory=lambda: np.diag([1e4, 1e4, 0.0, 0.0]))
    R: np.ndarray = field(default_factory=lambda: np.eye(NU))
    max_iterations: int = 50
    cost_tolerance: float = 1e-6  # relative decrease that ends the iterations
    reg_init: float = 1e-6
    reg_growth: float = 10.0
    reg_shrink: float = 0.3
    reg_max: float = 1e8
    dt: float = 0.01
    integration_substeps: int = 10  # dynamics sub-steps inside each dt (1 kHz at dt = 0.01)

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        if self.Q.shape != (NX, NX) or self.R.shape != (NU, NU):
            raise ValueError("Q and R must be 4x4")
        if not np.allclose(self.Q, self.Q.T) or np.linalg.eigvalsh(self.Q).min() < -1e-12:
            raise ValueError("Q must be symmetric positive semidefinite")
        if not np.allclose(self.R, self.R.T) or np.linalg.eigvalsh(self.R).min() <= 0:
            raise ValueError("R must be symmetric positive definite")


class CableDynamics:
    """Orientation-locked robot dynamics integrated with semi-implicit Euler."""

    def __init__(self, model: RobotModel, dt: float, substeps: int = 1):
        self.model = model
        self.dt = dt
        self.substeps = substeps
        m = model
        self._mounts_minus_pulleys = m.mounts - m.pulleys
        self._c = m.spool_mass
        self._gw = np.array([0.0, -m.mass * m.gravity])

    def accel(self, x, u):
        m = self.model
        r = x[:2] + self._mounts_minus_pulleys
        l = np.sqrt(r[:, 0] ** 2 + r[:, 1] ** 2)
        if l.min() < 1e-6:
            raise mdl.DegenerateCableError("degenerate cable: end effector at a pulley")
        d = -r / l[:, None]
        ldot = -(d @ x[2:])
        s = u / m.winch_radius + m.friction_coulomb * np.tanh(50.0 * ldot) + m.friction_viscous * ldot
        active = np.ones(4, dtype=bool)
        while True:
            da = d[active]
            M = m.mass * np.eye(2) + self._c * da.T @ da
            acc = np.linalg.solve(M, da.T @ s[active] + self._gw)
            t = s + self._c * -(d @ acc)
            neg = active & (t < 0)
            if not neg.any():
                return acc
            active &= ~neg

    def step(self, x, u):
        h = self.dt / self.substeps
        x = np.array(x, dtype=float)
        for _ in range(self.substeps):
            x[2:] += h * self.accel(x, u)
            x[:2] += h * x[2:]
        return x

    def linearize(self, X, U):
        return mdl.linearize_batch(self.model, X, U, self.dt, self.substeps)


class LinearDynamics:
    """``x' = A x + B u + c``; used for LQ sanity instances."""

    def __init__(self, A, B, c=None):
        self.A = np.asarray(A, float)
        self.B = np.asarray(B, float)
        self.c = np.zeros(len(self.A)) if c is None else np.asarray(c, float)

    def step(self, x, u):
        return self.A @ x + self.B @ u + self.c

    def linearize(self, X, U):
        n = len(X)
        return np.broadcast_to(self.A, (n,) + self.A.shape), np.broadcast_to(self.B, (n,) + self.B.shape)


@dataclass
class TrackingProblem:
    dynamics: object
    x_ref: np.ndarray  # (N+1, 4)
    u_ref: np.ndarray  # (N, 4)
    u_init: np.ndarray  # (N, 4)
    Q: np.ndarray
    R: np.ndarray
    x0: np.ndarray
    dt: float
    paint: np.ndarray
    config: ILQRConfig
    model: RobotModel | None = None

    @property
    def horizon(self) -> int:
        return len(self.u_ref)


@dataclass
class ControlSchedule:
    """Per-step feedforward state/torque, feedback gain and paint command.

    The online law is ``tau = K[k] (x_ff(t) - x_hat) + u_ff[k]``.
    """

    dt: float
    x_ff: np.ndarray  # (N, 4)
    u_ff: np.ndarray  # (N, 4)
    K: np.ndarray  # (N, 4, 4)
    paint: np.ndarray  # (N,)
    Q: np.ndarray | None = None
    R: np.ndarray | None = None
    model_hash: str = ""

    def __post_init__(self):
        self.x_ff = np.asarray(self.x_ff, float)
        self.u_ff = np.asarray(self.u_ff, float)
        self.K = np.asarray(self.K, float)
        self.paint = np.asarray(self.paint, bool)
        n = len(self.x_ff)
        if not (len(self.u_ff) == len(self.K) == len(self.paint) == n):
            raise ValueError("schedule arrays must have equal length")
        if not (np.all(np.isfinite(self.x_ff)) and np.all(np.isfinite(self.u_ff)) and np.all(np.isfinite(self.K))):
            raise ValueError("schedule contains non-finite values")

    def __len__(self) -> int:
        return len(self.x_ff)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    @property
    def duration(self) -> float:
        return (len(self) - 1) * self.dt

    def torque_violations(self, model: RobotModel) -> int:
        return int(np.sum((self.u_ff < model.torque_min - 1e-12) | (self.u_ff > model.torque_max + 1e-12)))

    def to_csv(self, path) -> None:
        q = " ".join(repr(float(v)) for v in (self.Q if self.Q is not None else np.zeros((4, 4))).ravel())
        r = " ".join(repr(float(v)) for v in (self.R if self.R is not None else np.zeros((4, 4))).ravel())
        cols = (["k"] + [f"xff{i}" for i in range(4)] + [f"uff{i}" for i in range(4)]
                + [f"K{i}{j}" for i in range(4) for j in range(4)] + ["paint"])
        lines = [f"# dt={self.dt!r}", f"# Q={q}", f"# R={r}", f"# model={self.model_hash}", ",".join(cols)]
        for k in range(len(self)):
            vals = [*self.x_ff[k].tolist(), *self.u_ff[k].tolist(), *self.K[k].ravel().tolist()]
            lines.append(",".join([str(k)] + [repr(v) for v in vals] + [str(int(self.paint[k]))]))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "ControlSchedule":
        header = {}
        rows = []
        for line in Path(path).read_text().splitlines():
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                header[key] = value
            elif line and not line.startswith("k,"):
                rows.append([float(v) for v in line.split(",")])
        if "dt" not in header:
            raise ValueError(f"{path}: missing dt header")
        data = np.array(rows, dtype=float).reshape(-1, 1 + 4 + 4 + 16 + 1)
        Q = np.array(header["Q"].split(), float).reshape(4, 4) if header.get("Q") else None
        R = np.array(header["R"].split(), float).reshape(4, 4) if header.get("R") else None
        return cls(float(header["dt"]), data[:, 1:5], data[:, 5:9], data[:, 9:25].reshape(-1, 4, 4),
                   data[:, 25] > 0.5, Q, R, header.get("model", ""))


@dataclass
class ILQRReport:
    costs: list  # cost of every accepted iterate, starting with the initial rollout
    max_residual: float
    iterations: int
    converged: bool
    torque_violations: int = 0


def centered_static_torques(model: RobotModel, position) -> np.ndarray:
    """Torques closest to the mid-range torque that hold ``position`` at rest."""
    W = mdl.wrench_matrix(model, (0.0, position[0], position[1]))[1:]
    r = model.winch_radius
    u_m = np.full(4, model.torque_mid)
    w = np.array([0.0, model.mass * model.gravity])
    # W (u / r) = w  ->  minimum-norm correction of u_m
    return u_m + r * np.linalg.lstsq(W, w - W @ u_m / r, rcond=None)[0]


def build_problem(model: RobotModel, reference: TimedTrajectory, config: ILQRConfig | None = None,
                  init: str = "centered") -> TrackingProblem:
    """Assemble the tracking problem for ``reference``.

    ``init`` picks the gravity-compensating torque guess: ``"centered"``
    (closest to mid-range torque) or ``"min_tension"`` (minimum total tension).
    """
    config = config or ILQRConfig(dt=reference.dt)
    if not np.isclose(config.dt, reference.dt, rtol=0, atol=1e-12):
        raise ValueError(f"dt mismatch: trajectory {reference.dt} vs config {config.dt}")
    if len(reference) < 2:
        raise ValueError("reference needs at least two samples")
    x_ref = reference.states
    n = len(reference) - 1
    u_m = np.full((n, NU), model.torque_mid)
    u_init = np.empty((n, NU))
    for k in range(n):
        p = reference.positions[k]
        try:
            if init == "centered":
                u_init[k] = centered_static_torques(model, p)
            elif init == "min_tension":
                t = mdl.static_tensions(model, (0.0, p[0], p[1]))
                u_init[k] = mdl.winch_torque(model, t, np.zeros(4), np.zeros(4))
            else:
                raise ValueError(f"unknown init {init!r}")
        except (mdl.InfeasibleError, mdl.DegenerateCableError):
            u_init[k] = u_m[k]
    x0 = np.concatenate([reference.positions[0], np.zeros(2)])
    dynamics = CableDynamics(model, reference.dt, config.integration_substeps)
    return TrackingProblem(dynamics, x_ref, u_m, u_init, config.Q, config.R, x0,
                           reference.dt, reference.paint.copy(), config, model)


def trajectory_cost(problem: TrackingProblem, X, U) -> float:
    dx = X - problem.x_ref
    du = U - problem.u_ref
    return float(np.einsum("ki,ij,kj->", dx, problem.Q, dx) + np.einsum("ki,ij,kj->", du, problem.R, du))


def _backward(problem, X, U, A, B, reg):
    """Riccati sweep in reverse time.  Returns (k, K, expected decrease) or None."""
    Q2, R2 = 2 * problem.Q, 2 * problem.R
    dx = X - problem.x_ref
    du = U - problem.u_ref
    n = problem.horizon
    kff = np.empty((n, NU))
    Kfb = np.empty((n, NU, NX))
    Vx = Q2 @ dx[-1]
    Vxx = Q2.copy()
    d1 = d2 = 0.0
    eye = np.eye(NU)
    for k in range(n - 1, -1, -1):
        Ak, Bk = A[k], B[k]
        VxxA = Vxx @ Ak
        VxxB = Vxx @ Bk
        Qx = Q2 @ dx[k] + Ak.T @ Vx
        Qu = R2 @ du[k] + Bk.T @ Vx
        Qxx = Q2 + Ak.T @ VxxA
        Quu = R2 + Bk.T @ VxxB
        Qux = Bk.T @ VxxA
        try:
            L = np.linalg.cholesky(Quu + reg * eye)
        except np.linalg.LinAlgError:
            return None
        kk = -_chol_solve(L, Qu)
        KK = -_chol_solve(L, Qux)
        kff[k] = kk
        Kfb[k] = KK
        d1 += kk @ Qu
        d2 += 0.5 * kk @ Quu @ kk
        Vx = Qx + KK.T @ Quu @ kk + KK.T @ Qu + Qux.T @ kk
        Vxx = Qxx + KK.T @ Quu @ KK + KK.T @ Qux + Qux.T @ KK
        Vxx = 0.5 * (Vxx + Vxx.T)
    return kff, Kfb, (d1, d2)


def _chol_solve(L, b):
    from scipy.linalg import cho_solve

    return cho_solve((L, True), b)


def _forward(problem, X, U, kff, Kfb, alpha):
    dyn = problem.dynamics
    n = problem.horizon
    Xn = np.empty_like(X)
    Un = np.empty_like(U)
    Xn[0] = problem.x0
    for k in range(n):
        Un[k] = U[k] + alpha * kff[k] + Kfb[k] @ (Xn[k] - X[k])
        Xn[k + 1] = dyn.step(Xn[k], Un[k])
        if not np.all(np.isfinite(Xn[k + 1])):
            return None, None
    return Xn, Un


def _rollout(problem, U):
    X = np.empty((problem.horizon + 1, NX))
    X[0] = problem.x0
    for k in range(problem.horizon):
        X[k + 1] = problem.dynamics.step(X[k], U[k])
    return X


def _initial_rollout(problem):
    """Gravity-compensating guess stabilized by LQ feedback around the reference."""
    X = problem.x_ref.copy()
    U = problem.u_init.copy()
    A, B = problem.dynamics.linearize(X[:-1], U)
    reg = problem.config.reg_init
    while True:
        out = _backward(problem, X, U, A, B, reg)
        if out is not None:
            break
        reg *= problem.config.reg_growth
    _, Kfb, _ = out
    try:
        Xn, Un = _forward(problem, X, U, np.zeros_like(U), Kfb, 0.0)
    except (mdl.DegenerateCableError, np.linalg.LinAlgError):
        Xn = None
    if Xn is None:
        Un = problem.u_init.copy()
        Xn = _rollout(problem, Un)
    return Xn, Un


def solve(problem: TrackingProblem):
    """Run iLQR; returns ``(ControlSchedule, ILQRReport)``."""
    cfg = problem.config
    X, U = _initial_rollout(problem)
    J = trajectory_cost(problem, X, U)
    if not np.isfinite(J):
        raise DivergenceError("initial rollout diverged")
    costs = [J]
    reg = cfg.reg_init
    converged = False
    iterations = 0
    A, B = problem.dynamics.linearize(X[:-1], U)
    while iterations < cfg.max_iterations:
        iterations += 1
        out = _backward(problem, X, U, A, B, reg)
        if out is None:
            reg *= cfg.reg_growth
            if reg > cfg.reg_max:
                break
            continue
        kff, Kfb, _ = out
        accepted = False
        for alpha in LINE_SEARCH:
            try:
                Xn, Un = _forward(problem, X, U, kff, Kfb, alpha)
            except (mdl.DegenerateCableError, np.linalg.LinAlgError):
                continue
            if Xn is None:
                continue
            Jn = trajectory_cost(problem, Xn, Un)
            if np.isfinite(Jn) and Jn < J:
                accepted = True
                break
        if not accepted:
            reg *= cfg.reg_growth
            if reg > cfg.reg_max:
                converged = True  # no descent direction left at this regularization
                break
            continue
        decrease = J - Jn
        X, U, J = Xn, Un, Jn
        costs.append(J)
        reg = max(reg * cfg.reg_shrink, 1e-12)
        logger.debug("iter %d cost %.6g alpha %.3g reg %.2g", iterations, J, alpha, reg)
        A, B = problem.dynamics.linearize(X[:-1], U)
        if decrease < cfg.cost_tolerance * max(1.0, abs(J)):
            converged = True
            break
    if not np.isfinite(J):
        raise DivergenceError("iLQR diverged")

    # one last sweep at the solution gives the locally optimal feedback law
    reg = 0.0
    while True:
        out = _backward(problem, X, U, A, B, reg)
        if out is not None:
            break
        reg = max(reg * cfg.reg_growth, cfg.reg_init)
    _, Kfb, _ = out

    residual = _dynamics_residual(problem, X, U)
    n = problem.horizon
    u_ff = np.vstack([U, U[-1:]])
    K = -np.concatenate([Kfb, Kfb[-1:]], axis=0)
    model_hash = problem.model.digest() if problem.model is not None else ""
    schedule = ControlSchedule(problem.dt, X, u_ff, K, problem.paint[: n + 1], problem.Q, problem.R, model_hash)
    violations = schedule.torque_violations(problem.model) if problem.model is not None else 0
    report = ILQRReport(costs, residual, iterations, converged, violations)
    return schedule, report


def _dynamics_residual(problem, X, U) -> float:
    res = 0.0
    for k in range(problem.horizon):
        res = max(res, float(np.abs(problem.dynamics.step(X[k], U[k]) - X[k + 1]).max()))
    return res


def stylize_sweep(problem: TrackingProblem, scales):
    """Re-solve with ``R <- s R`` for each scale; larger scales smooth the motion."""
    out = []
    for s in scales:
        if s <= 0:
            raise ValueError("scales must be positive")
        p = TrackingProblem(**{**problem.__dict__, "R": s * problem.R})
        out.append(solve(p)[0])
    return out


class ILQRTracker(BaseEstimator):
    """Scikit-learn style front end: ``fit`` a reference, read ``schedule_``."""

    def __init__(self, model=None, Q=None, R=None, max_iterations=50, cost_tolerance=1e-6, reg_init=1e-6,
                 init="centered"):
        self.model = model
        self.Q = Q
        self.R = R
        self.max_iterations = max_iterations
        self.cost_tolerance = cost_tolerance
        self.reg_init = reg_init
        self.init = init

    def _config(self, dt):
        kw = {}
        if self.Q is not None:
            kw["Q"] = self.Q
        if self.R is not None:
            kw["R"] = self.R
        return ILQRConfig(max_iterations=self.max_iterations, cost_tolerance=self.cost_tolerance,
                          reg_init=self.reg_init, dt=dt, **kw)

    def fit(self, reference: TimedTrajectory, y=None):
        model = self.model if self.model is not None else RobotModel()
        self.problem_ = build_problem(model, reference, self._config(reference.dt), init=self.init)
        self.schedule_, self.report_ = solve(self.problem_)
        return self

    def predict(self, reference: TimedTrajectory | None = None) -> np.ndarray:
        """Feedforward states ``x_ff`` (refits when given a new reference)."""
        if reference is not None:
            self.fit(reference)
        check_is_fitted(self, "schedule_")
        return self.schedule_.x_ff
