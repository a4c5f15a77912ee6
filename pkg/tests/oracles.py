"""Independent reference computations shared by several test modules."""
import cvxpy as cp
import numpy as np
import shapely
from scipy.optimize import linprog
from shapely.geometry import MultiLineString, Polygon

from graffiti_cdpr import model as mdl


def random_simple_polygon(rng, n_max=12, radius=0.4):
    """Star-shaped polygon around the origin with 3..n_max vertices."""
    n = int(rng.integers(3, n_max + 1))
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    # keep vertices apart so the ring is never degenerate
    angles = angles[np.concatenate([[True], np.diff(angles) > 0.05])]
    if len(angles) < 3:
        angles = np.array([0.0, 2.1, 4.2])
    radii = rng.uniform(0.35, 1.0, len(angles)) * radius
    return Polygon(np.column_stack([radii * np.cos(angles), radii * np.sin(angles)]))


def raster_coverage(polygon, strokes, spacing, pixel=1e-3):
    """Fraction of 1 mm grid points in the eroded interior within spacing/2 of paint.

    The interior is eroded by spacing/2; paint is the union of the stroke polylines.
    """
    eroded = polygon.buffer(-spacing / 2)
    if eroded.is_empty:
        return 1.0
    x0, y0, x1, y1 = eroded.bounds
    xs = np.arange(np.floor(x0 / pixel), np.ceil(x1 / pixel) + 1) * pixel
    ys = np.arange(np.floor(y0 / pixel), np.ceil(y1 / pixel) + 1) * pixel
    X, Y = np.meshgrid(xs, ys)
    X, Y = X.ravel(), Y.ravel()
    inside = shapely.contains_xy(eroded, X, Y)
    X, Y = X[inside], Y[inside]
    if len(X) == 0:
        return 1.0
    paint = MultiLineString([s.points for s in strokes])
    shapely.prepare(paint)
    near = shapely.dwithin(paint, shapely.points(X, Y), spacing / 2 + 1e-12)
    return float(near.mean())


def contained(polygon, strokes, tol=1e-9):
    """True when every stroke vertex and segment lies in the polygon (up to tol)."""
    grown = polygon.buffer(tol)
    lines = MultiLineString([s.points for s in strokes])
    return bool(grown.covers(lines))


def static_oracle(model, pose):
    """Minimum-total tensions by LP, ties broken towards mid-range by a QP; None if infeasible."""
    W = mdl.wrench_matrix(model, pose)[1:]
    w = np.array([0.0, model.mass * model.gravity])
    lo, hi = model.tension_min, model.tension_max
    lp = linprog(np.ones(4), A_eq=W, b_eq=w, bounds=[(lo, hi)] * 4, method="highs")
    if lp.status == 2:
        return None
    t = cp.Variable(4)
    cons = [W @ t == w, t >= lo, t <= hi, cp.sum(t) <= lp.fun + 1e-9]
    cp.Problem(cp.Minimize(cp.sum_squares(t - 0.5 * (lo + hi))), cons).solve(
        solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return t.value


def fd_jacobians(model, x, u, dt, substeps, h=1e-6):
    """Central differences of one integration step w.r.t. state and torque."""
    A = np.zeros((4, 4))
    B = np.zeros((4, 4))
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        A[:, j] = (mdl.step(model, x + e, u, dt, substeps) - mdl.step(model, x - e, u, dt, substeps)) / (2 * h)
        B[:, j] = (mdl.step(model, x, u + e, dt, substeps) - mdl.step(model, x, u - e, dt, substeps)) / (2 * h)
    return A, B


def dense_lq_oracle(A, B, c, x_ref, u_m, Q, R):
    """Stacked least squares over all controls: X = F x0 + G U + h."""
    n, nx, nu = len(u_m), A.shape[0], B.shape[1]
    G = np.zeros(((n + 1) * nx, n * nu))
    h = np.zeros((n + 1) * nx)
    h[:nx] = x_ref[0]
    for k in range(n):
        rows, prev = slice((k + 1) * nx, (k + 2) * nx), slice(k * nx, (k + 1) * nx)
        G[rows] = A @ G[prev]
        G[rows, k * nu:(k + 1) * nu] += B
        h[rows] = A @ h[prev] + c
    Qs = np.kron(np.eye(n + 1), Q)
    Rs = np.kron(np.eye(n), R)
    H = G.T @ Qs @ G + Rs
    g = G.T @ Qs @ (x_ref.ravel() - h) + Rs @ u_m.ravel()
    U = np.linalg.solve(H, g).reshape(n, nu)
    return (G @ U.ravel() + h).reshape(n + 1, nx), U


def taut_state(rng, model, margin=0.5):
    """Random state and torques with every cable tension above ``margin``."""
    while True:
        p = rng.uniform([-1.0, -0.8], [1.0, 0.8])
        v = rng.normal(0, 0.5, 2)
        base = mdl.winch_torque(model, mdl.static_tensions(model, (0.0, *p)), np.zeros(4), np.zeros(4))
        u = base + rng.normal(0, 0.05, 4)
        _, t = mdl.translational_accel(model, p, v, u)
        if t.min() > margin:
            return np.concatenate([p, v]), u
