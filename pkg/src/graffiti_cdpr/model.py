"""Planar 4-cable robot: geometry, kinematics, statics and dynamics.

Conventions used throughout the package:

* pose is ``(theta, x, y)``: end-effector rotation and the world position of
  its origin (the nozzle, also the centre of mass);
* twist is ``(omega, vx, vy)`` with the linear part expressed in the world
  frame, so the planar Newton-Euler equations carry no velocity terms;
* ``r_i`` points from pulley ``a_i`` to the world mount point; a taut cable
  pulls the end effector along ``d_i = -r_hat_i`` (towards its pulley), which
  gives ``ldot = -W^T V`` for the 3x4 wrench matrix ``W``.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from graffiti_cdpr.geometry import Rect

N_CABLES = 4

DEFAULT_PULLEYS = ((1.52, -1.22), (1.52, 1.22), (-1.52, 1.22), (-1.52, -1.22))
DEFAULT_MOUNTS = ((0.094, -0.061), (0.094, 0.061), (-0.094, 0.061), (-0.094, -0.061))

# cable indices whose pulleys sit on the top edge of the frame
TOP_CABLES = (1, 2)

_TANH_SHARPNESS = 50.0


class DegenerateCableError(ValueError):
    """A cable has (near) zero length."""


class InfeasibleError(ValueError):
    """No admissible tension vector balances the requested wrench."""


class DynamicsError(RuntimeError):
    """The coupled winch/rigid-body system could not be solved."""


@dataclass(frozen=True)
class RobotModel:
    pulleys: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_PULLEYS))
    mounts: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_MOUNTS))
    winch_radius: float = 0.0127
    motor_inertia: float = 1.96e-4
    friction_coulomb: float = 0.5
    friction_viscous: float = 0.1
    mass: float = 1.2
    inertia_zz: float = 2.5e-3
    gravity: float = 9.81
    tension_min: float = 1.0
    tension_max: float = 200.0
    torque_min: float | None = None
    torque_max: float = 3.86

    def __post_init__(self):
        pulleys = np.array(self.pulleys, dtype=float).reshape(N_CABLES, 2)
        mounts = np.array(self.mounts, dtype=float).reshape(N_CABLES, 2)
        pulleys.setflags(write=False)
        mounts.setflags(write=False)
        object.__setattr__(self, "pulleys", pulleys)
        object.__setattr__(self, "mounts", mounts)
        if self.torque_min is None:
            object.__setattr__(self, "torque_min", self.tension_min * self.winch_radius)
        if self.winch_radius <= 0:
            raise ValueError("winch_radius must be positive")
        if self.mass <= 0 or self.inertia_zz <= 0:
            raise ValueError("mass and inertia_zz must be positive")
        if self.motor_inertia < 0 or self.friction_coulomb < 0 or self.friction_viscous < 0:
            raise ValueError("motor inertia and friction coefficients must be non-negative")
        if self.tension_min < 0 or self.tension_min > self.tension_max:
            raise ValueError("tension limits must satisfy 0 <= t_min <= t_max")
        if self.torque_min > self.torque_max:
            raise ValueError("torque limits must satisfy tau_min <= tau_max")
        for i, j in itertools.combinations(range(N_CABLES), 2):
            if np.linalg.norm(pulleys[i] - pulleys[j]) < 1e-9:
                raise ValueError("pulleys must be pairwise distinct")

    @property
    def torque_mid(self) -> float:
        """Torque every cable is pulled towards by the control cost."""
        return 0.5 * (self.torque_min + self.torque_max)

    @property
    def spool_mass(self) -> float:
        """Motor inertia reflected to the cable, I / r^2 (kg)."""
        return self.motor_inertia / self.winch_radius**2

    @property
    def frame(self) -> Rect:
        lo = self.pulleys.min(axis=0)
        hi = self.pulleys.max(axis=0)
        return Rect(lo[0], lo[1], hi[0], hi[1])

    def replace(self, **changes) -> "RobotModel":
        if "tension_min" in changes and "torque_min" not in changes:
            changes["torque_min"] = None
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pulleys"] = self.pulleys.tolist()
        d["mounts"] = self.mounts.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RobotModel":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown robot config keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "RobotModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def digest(self) -> str:
        """Short stable hash of every physical parameter."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def rot2(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _perp(a):
    # 90 degree rotation, omega x a for unit omega
    return np.stack([-a[..., 1], a[..., 0]], axis=-1)


def cable_vectors(model: RobotModel, pose):
    """Pulley-to-mount vectors ``r`` (4x2), lengths ``l`` and unit vectors."""
    theta, x, y = pose
    mounts_w = np.array([x, y]) + model.mounts @ rot2(theta).T
    r = mounts_w - model.pulleys
    l = np.linalg.norm(r, axis=1)
    if np.any(l < 1e-6):
        raise DegenerateCableError("degenerate cable: end effector at a pulley")
    return r, l, r / l[:, None]


def wrench_matrix(model: RobotModel, pose) -> np.ndarray:
    """3x4 map from tensions to (torque, fx, fy) on the end effector."""
    _, _, rhat = cable_vectors(model, pose)
    d = -rhat
    arm = model.mounts @ rot2(pose[0]).T
    return np.vstack([_cross2(arm, d), d.T])


def cable_rates(model: RobotModel, pose, twist, twist_accel=None):
    """Cable length rates, and accelerations when ``twist_accel`` is given.

    Accelerations drop the centripetal and unit-vector-rotation terms.
    """
    W = wrench_matrix(model, pose)
    ldot = -W.T @ np.asarray(twist, dtype=float)
    if twist_accel is None:
        return ldot
    lddot = -W.T @ np.asarray(twist_accel, dtype=float)
    return ldot, lddot


def friction(model: RobotModel, ldot):
    ldot = np.asarray(ldot, dtype=float)
    return -(model.friction_coulomb * np.tanh(_TANH_SHARPNESS * ldot) + model.friction_viscous * ldot)


def friction_slope(model: RobotModel, ldot):
    ldot = np.asarray(ldot, dtype=float)
    sech2 = 1.0 - np.tanh(_TANH_SHARPNESS * ldot) ** 2
    return -(model.friction_coulomb * _TANH_SHARPNESS * sech2 + model.friction_viscous)


def winch_torque(model: RobotModel, tension, ldot, lddot):
    r = model.winch_radius
    return (np.asarray(tension) * r - model.motor_inertia * np.asarray(lddot) / r
            + friction(model, ldot) * r)


def tension_from_torque(model: RobotModel, torque, ldot, lddot):
    r = model.winch_radius
    return (np.asarray(torque) + model.motor_inertia * np.asarray(lddot) / r) / r - friction(model, ldot)


def static_tensions(model: RobotModel, pose, wrench=None) -> np.ndarray:
    """Minimum-total tensions holding the end effector against gravity.

    Only the translational block is balanced.  The linear program is solved
    exactly by enumerating vertices (two cables at a bound, two free); ties
    on the optimal face are broken towards the middle of the tension range.
    """
    if len(pose) == 2:
        pose = (0.0, pose[0], pose[1])
    W = wrench_matrix(model, pose)[1:]
    w = np.array([0.0, model.mass * model.gravity]) if wrench is None else np.asarray(wrench, float)
    lo, hi = model.tension_min, model.tension_max
    tol = 1e-9 * max(1.0, hi)

    if hi - lo <= tol:
        t = np.full(N_CABLES, lo)
        if np.linalg.norm(W @ t - w) > 1e-9:
            raise InfeasibleError("infeasible: tension range is degenerate")
        return t

    vertices = []
    for free in itertools.combinations(range(N_CABLES), 2):
        fixed = [i for i in range(N_CABLES) if i not in free]
        Wf = W[:, free]
        if abs(np.linalg.det(Wf)) < 1e-12:
            continue
        for bounds in itertools.product((lo, hi), repeat=2):
            t = np.empty(N_CABLES)
            t[fixed] = bounds
            t[list(free)] = np.linalg.solve(Wf, w - W[:, fixed] @ np.array(bounds))
            if np.all(t >= lo - tol) and np.all(t <= hi + tol):
                vertices.append(np.clip(t, lo, hi))
    if not vertices:
        raise InfeasibleError("infeasible: no tension vector within limits balances gravity")

    V = np.array(vertices)
    sums = V.sum(axis=1)
    best = sums.min()
    face = V[sums <= best + 1e-9 * max(1.0, abs(best))]
    face = np.unique(np.round(face, 12), axis=0)
    if len(face) == 1:
        return face[0]
    return _closest_on_face(face, np.full(N_CABLES, 0.5 * (lo + hi)))


def _closest_on_face(vertices: np.ndarray, target: np.ndarray) -> np.ndarray:
    # min ||sum lam_j v_j - target|| over the simplex; the face is tiny (2-3 vertices)
    from scipy.optimize import minimize

    n = len(vertices)
    if n == 2:
        a, b = vertices
        d = b - a
        s = np.clip(np.dot(target - a, d) / np.dot(d, d), 0.0, 1.0)
        return a + s * d
    res = minimize(
        lambda lam: np.sum((lam @ vertices - target) ** 2),
        np.full(n, 1.0 / n),
        jac=lambda lam: 2 * vertices @ (lam @ vertices - target),
        bounds=[(0, 1)] * n,
        constraints=[{"type": "eq", "fun": lambda lam: lam.sum() - 1.0}],
        method="SLSQP",
        options={"ftol": 1e-15, "maxiter": 200},
    )
    return res.x @ vertices


def rigid_body_accel(model: RobotModel, pose, twist, tensions) -> np.ndarray:
    W = wrench_matrix(model, pose)
    wrench = W @ np.asarray(tensions, float) + np.array([0.0, 0.0, -model.mass * model.gravity])
    return wrench / np.array([model.inertia_zz, model.mass, model.mass])


def forward_dynamics(model: RobotModel, pose, twist, torques):
    """Solve winch + cable kinematics + rigid body for ``(Vdot, tensions, lddot)``.

    Cables whose tension would come out negative are slack: tension is
    clamped to zero, they leave the coupled solve, and the returned
    ``lddot`` for them is the free acceleration of their own spool.
    """
    twist = np.asarray(twist, dtype=float)
    torques = np.asarray(torques, dtype=float)
    W = wrench_matrix(model, pose)
    ldot = -W.T @ twist
    s = torques / model.winch_radius - friction(model, ldot)
    c = model.spool_mass
    G = np.diag([model.inertia_zz, model.mass, model.mass])
    gw = np.array([0.0, 0.0, -model.mass * model.gravity])

    active = np.ones(N_CABLES, dtype=bool)
    for _ in range(N_CABLES + 1):
        Ws = W[:, active]
        M = G + c * Ws @ Ws.T
        try:
            vdot = np.linalg.solve(M, Ws @ s[active] + gw)
        except np.linalg.LinAlgError as exc:
            raise DynamicsError("singular coupled dynamics") from exc
        lddot = -W.T @ vdot
        t = s + c * lddot
        neg = active & (t < 0)
        if not neg.any():
            break
        active &= ~neg
    t = np.where(active, t, 0.0)
    if c > 0:
        lddot = np.where(active, lddot, -s / c)
    return vdot, t, lddot


# --- reduced translational model used by the optimizer -----------------------------

def _translational_terms(model: RobotModel, P, V, U):
    """Batched orientation-locked dynamics.  Shapes (N,2), (N,2), (N,4)."""
    r = P[:, None, :] + model.mounts[None] - model.pulleys[None]
    l = np.linalg.norm(r, axis=2)
    if np.any(l < 1e-6):
        raise DegenerateCableError("degenerate cable: end effector at a pulley")
    rhat = r / l[..., None]
    d = -rhat
    ldot = np.einsum("nij,nj->ni", rhat, V)
    s = U / model.winch_radius - friction(model, ldot)
    c = model.spool_mass
    m = model.mass
    gw = np.array([0.0, -m * model.gravity])
    eye = np.eye(2)

    active = np.ones(l.shape, dtype=bool)
    for _ in range(N_CABLES + 1):
        da = d * active[..., None]
        M = m * eye + c * np.einsum("nki,nkj->nij", da, da)
        h = np.einsum("nki,nk->ni", da, s) + gw
        acc = np.linalg.solve(M, h[..., None])[..., 0]
        lddot = np.einsum("nki,ni->nk", rhat, acc)
        t = s + c * lddot
        neg = active & (t < 0)
        if not neg.any():
            break
        active &= ~neg
    t = np.where(active, t, 0.0)
    return dict(r=r, l=l, rhat=rhat, d=d, ldot=ldot, s=s, active=active, M=M, acc=acc, t=t)


def translational_accel(model: RobotModel, p, v, u):
    """Acceleration and tensions of the orientation-locked end effector."""
    terms = _translational_terms(model, np.atleast_2d(p), np.atleast_2d(v), np.atleast_2d(u))
    return terms["acc"][0], terms["t"][0]


def step(model: RobotModel, x, u, dt: float, substeps: int = 1) -> np.ndarray:
    """Semi-implicit Euler step of the state ``(px, py, vx, vy)``.

    The torque is held over ``dt``; ``substeps`` equal sub-intervals are used.
    """
    x = np.asarray(x, dtype=float)
    h = dt / substeps
    p, v = x[:2], x[2:]
    for _ in range(substeps):
        acc, _ = translational_accel(model, p, v, u)
        v = v + h * acc
        p = p + h * v
    return np.concatenate([p, v])


def _substep_jacobians(model: RobotModel, P, V, U, h: float):
    T = _translational_terms(model, P, V, U)
    act = T["active"].astype(float)
    d, rhat, l, acc = T["d"], T["rhat"], T["l"], T["acc"]
    c = model.spool_mass
    fp = friction_slope(model, T["ldot"]) * act
    Minv = np.linalg.inv(T["M"])
    eye = np.eye(2)

    proj = eye[None, None] - np.einsum("nki,nkj->nkij", rhat, rhat)  # (N,4,2,2)
    dd_dp = -proj / l[..., None, None]  # d d_k / d p
    dldot_dp = np.einsum("ni,nkij->nkj", V, proj) / l[..., None]

    s_act = T["s"] * act
    dh_dp = (np.einsum("nkij,nk->nij", dd_dp, s_act)
             - np.einsum("nk,nki,nkj->nij", fp, d, dldot_dp))
    dh_dv = np.einsum("nk,nki,nkj->nij", fp, d, d)
    dh_du = np.einsum("nki,nk->nik", d, act) / model.winch_radius

    # (dM/dp_j) a = c sum_k (dd_k/dp_j d_k^T + d_k dd_k/dp_j^T) a
    da = d * act[..., None]
    dda = dd_dp * act[..., None, None]
    d_dot_a = np.einsum("nki,ni->nk", da, acc)
    dM_a = c * (np.einsum("nkij,nk->nij", dda, d_dot_a)
                + np.einsum("nki,nkmj,nm->nij", da, dda, acc))
    a_p = Minv @ (dh_dp - dM_a)
    a_v = Minv @ dh_dv
    a_u = Minv @ dh_du

    n = len(P)
    A = np.zeros((n, 4, 4))
    B = np.zeros((n, 4, 4))
    A[:, 2:, :2] = h * a_p
    A[:, 2:, 2:] = eye + h * a_v
    A[:, :2, :2] = eye + h * A[:, 2:, :2]
    A[:, :2, 2:] = h * A[:, 2:, 2:]
    B[:, 2:] = h * a_u
    B[:, :2] = h * B[:, 2:]
    return A, B, acc


def linearize_batch(model: RobotModel, X, U, dt: float, substeps: int = 1):
    """Discrete Jacobians ``A`` (N,4,4) and ``B`` (N,4,4) of :func:`step`."""
    X = np.atleast_2d(np.asarray(X, float))
    U = np.atleast_2d(np.asarray(U, float))
    h = dt / substeps
    P, V = X[:, :2].copy(), X[:, 2:].copy()
    A = np.broadcast_to(np.eye(4), (len(X), 4, 4)).copy()
    B = np.zeros((len(X), 4, 4))
    for _ in range(substeps):
        Aj, Bj, acc = _substep_jacobians(model, P, V, U, h)
        A = Aj @ A
        B = Aj @ B + Bj
        V = V + h * acc
        P = P + h * V
    return A, B


def linearize_dynamics(model: RobotModel, x, u, dt: float, substeps: int = 1):
    A, B = linearize_batch(model, x, u, dt, substeps)
    return A[0], B[0]


def capability(model: RobotModel, motor_speed_max: float, motor_torque_max: float, payload: float):
    """Peak cable speed and acceleration for one winch hauling ``payload``."""
    r = model.winch_radius
    return motor_speed_max * r, motor_torque_max / (payload * r + model.motor_inertia / r)


def wfw_rectangle(model: RobotModel, grid_step: float) -> Rect:
    """Largest axis-aligned rectangle of statically feasible grid points."""
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    frame = model.frame
    xs = np.arange(np.ceil(frame.xmin / grid_step - 1e-9), np.floor(frame.xmax / grid_step + 1e-9) + 1) * grid_step
    ys = np.arange(np.ceil(frame.ymin / grid_step - 1e-9), np.floor(frame.ymax / grid_step + 1e-9) + 1) * grid_step
    ok = np.zeros((len(ys), len(xs)), dtype=bool)
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            ok[j, i] = is_statically_feasible(model, (x, y))
    if not ok.any():
        raise InfeasibleError("no feasible point in the wrench-feasible workspace")

    best = None
    for j0 in range(len(ys)):
        col = np.ones(len(xs), dtype=bool)
        for j1 in range(j0, len(ys)):
            col &= ok[j1]
            if not col.any():
                break
            for i0, i1 in _true_runs(col):
                key = (-(i1 - i0) * (j1 - j0), j0, i0, -(i1 - i0))
                if best is None or key < best[0]:
                    best = (key, (i0, j0, i1, j1))
    i0, j0, i1, j1 = best[1]
    return Rect(xs[i0], ys[j0], xs[i1], ys[j1])


def is_statically_feasible(model: RobotModel, position) -> bool:
    try:
        static_tensions(model, (0.0, position[0], position[1]))
    except (InfeasibleError, DegenerateCableError):
        return False
    return True


def _true_runs(mask):
    runs = []
    start = None
    for i, v in enumerate(mask):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i - 1))
            start = None
    if start is not None:
        runs.append((start, len(mask) - 1))
    return runs
