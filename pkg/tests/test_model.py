import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graffiti_cdpr import model as mdl
from graffiti_cdpr.model import RobotModel
from oracles import fd_jacobians, static_oracle, taut_state

HOME = (0.0, 0.0, 0.0)


def random_workspace_points(n, seed):
    return np.random.default_rng(seed).uniform([-1.2, -1.0], [1.2, 1.0], (n, 2))


# --- geometry and kinematics ---------------------------------------------------------


def test_home_lengths(model):
    _, l, _ = mdl.cable_vectors(model, HOME)
    assert l[0] == pytest.approx(math.hypot(0.094 - 1.52, -0.061 + 1.22), abs=1e-12)
    assert l[0] == pytest.approx(1.8376, abs=1e-4)
    assert np.ptp(l) <= 1e-12


def test_degenerate_cable(model):
    a, b = model.pulleys[0], model.mounts[0]
    with pytest.raises(mdl.DegenerateCableError, match="degenerate cable"):
        mdl.cable_vectors(model, (0.0, *(a - b)))


def test_cable_rates_examples(model):
    ldot = mdl.cable_rates(model, HOME, (0.0, 1.0, 0.0))
    np.testing.assert_allclose(ldot, [-0.776, -0.776, 0.776, 0.776], atol=1e-3)
    np.testing.assert_array_equal(mdl.cable_rates(model, HOME, np.zeros(3)), 0.0)


def test_cable_rates_match_length_derivative(model):
    rng = np.random.default_rng(1)
    h = 1e-5
    worst = 0.0
    for _ in range(1000):
        pose = np.array([rng.uniform(-0.5, 0.5), *rng.uniform([-1.0, -0.8], [1.0, 0.8])])
        twist = rng.normal(0, 1, 3)
        _, lp, _ = mdl.cable_vectors(model, pose + h * twist)
        _, lm, _ = mdl.cable_vectors(model, pose - h * twist)
        worst = max(worst, np.abs(mdl.cable_rates(model, pose, twist) - (lp - lm) / (2 * h)).max())
    assert worst <= 1e-6


def test_wrench_matrix_home(model):
    W = mdl.wrench_matrix(model, HOME)
    expected = np.array([[0.776, -0.631], [0.776, 0.631], [-0.776, 0.631], [-0.776, -0.631]]).T
    np.testing.assert_allclose(W[1:], expected, atol=1e-3)


def test_rate_is_negative_wrench_transpose(model):
    rng = np.random.default_rng(2)
    for _ in range(50):
        pose = (0.0, *rng.uniform(-0.8, 0.8, 2))
        v = rng.normal(size=2)
        W = mdl.wrench_matrix(model, pose)
        np.testing.assert_allclose(mdl.cable_rates(model, pose, (0.0, *v)), -W[1:].T @ v, atol=1e-14)


def test_wrench_matrix_half_turn_symmetry(model):
    # the frame is point-symmetric (a_{i+2} = -a_i, b_{i+2} = -b_i): turning the
    # scene by 180 degrees about the centre negates the force columns and swaps
    # them diagonally, while the torque row is only permuted
    rng = np.random.default_rng(0)
    for _ in range(20):
        theta, x, y = rng.uniform(-0.3, 0.3), *rng.uniform(-0.8, 0.8, 2)
        W = mdl.wrench_matrix(model, (theta, x, y))
        Wt = mdl.wrench_matrix(model, (theta, -x, -y))
        np.testing.assert_allclose(Wt[1:], -W[1:, [2, 3, 0, 1]], atol=1e-12)
        np.testing.assert_allclose(Wt[0], W[0, [2, 3, 0, 1]], atol=1e-12)


# --- winch and friction -------------------------------------------------------------


def test_winch_static_torque(model):
    tau = mdl.winch_torque(model, 16.556, 0.0, 0.0)
    assert tau == pytest.approx(16.556 * 0.0127, abs=1e-12)
    assert tau == pytest.approx(0.21026, abs=1e-5)


def test_friction_examples(model):
    m = model.replace(friction_coulomb=1.0, friction_viscous=0.1)
    assert mdl.friction(m, 0.0) == 0.0
    assert mdl.friction(model.replace(friction_coulomb=3.0, friction_viscous=2.0), 0.0) == 0.0
    assert mdl.friction(m, 0.1) == pytest.approx(-(math.tanh(5) + 0.01), abs=1e-12)
    assert mdl.friction(m, 0.1) == pytest.approx(-1.00991, abs=1e-5)


@given(st.floats(0, 200), st.floats(-5, 5), st.floats(-100, 100))
@settings(max_examples=200, deadline=None)
def test_winch_inverse_consistent(t, ldot, lddot):
    m = RobotModel()
    tau = mdl.winch_torque(m, t, ldot, lddot)
    assert mdl.tension_from_torque(m, tau, ldot, lddot) == pytest.approx(t, abs=1e-12)


# --- statics ------------------------------------------------------------------------


def test_static_tensions_home_two_kg(model):
    m2 = model.replace(mass=2.0)
    t = mdl.static_tensions(m2, HOME)
    np.testing.assert_allclose(t, [1.0, 16.556, 16.556, 1.0], atol=5e-3)
    np.testing.assert_allclose(t, static_oracle(m2, HOME), atol=1e-6)
    W = mdl.wrench_matrix(m2, HOME)[1:]
    assert np.abs(W @ t - [0, 2.0 * 9.81]).max() <= 1e-9
    # hand check: uppers balance the weight through their vertical component
    assert 0.6307 * (2 * t[1] - 2 * t[0]) == pytest.approx(19.62, abs=5e-3)


def test_static_tensions_zero_lower_bound(model):
    m = model.replace(mass=2.0, tension_min=0.0)
    t = mdl.static_tensions(m, HOME)
    np.testing.assert_allclose(t, [0.0, 15.555, 15.555, 0.0], atol=5e-3)
    np.testing.assert_allclose(t, static_oracle(m, HOME), atol=1e-6)


def test_static_tensions_match_oracle(model):
    for p in random_workspace_points(100, 3):
        pose = (0.0, *p)
        ref = static_oracle(model, pose)
        assert ref is not None
        np.testing.assert_allclose(mdl.static_tensions(model, pose), ref, atol=1e-6)


def test_infeasible_above_pulleys(model):
    rng = np.random.default_rng(4)
    for _ in range(100):
        pose = (0.0, rng.uniform(-1.4, 1.4), rng.uniform(1.3, 2.0))
        assert static_oracle(model, pose) is None
        with pytest.raises(mdl.InfeasibleError, match="infeasible"):
            mdl.static_tensions(model, pose)


def test_rigid_body_accel_examples(model):
    m2 = model.replace(mass=2.0)
    t = mdl.static_tensions(m2, HOME)
    assert np.linalg.norm(mdl.rigid_body_accel(m2, HOME, np.zeros(3), t)) <= 1e-9
    acc = mdl.rigid_body_accel(m2, HOME, np.zeros(3), t + [0, 10, 10, 0])
    assert acc[2] == pytest.approx(2 * 10 * 0.6307 / 2, abs=1e-3)
    assert abs(acc[1]) <= 1e-12 and abs(acc[0]) <= 1e-9
    np.testing.assert_allclose(mdl.rigid_body_accel(model, HOME, np.zeros(3), np.zeros(4)), [0, 0, -9.81])


# --- forward dynamics ---------------------------------------------------------------


def test_forward_dynamics_equilibrium(model):
    tau = mdl.winch_torque(model, mdl.static_tensions(model, HOME), np.zeros(4), np.zeros(4))
    vdot, _, _ = mdl.forward_dynamics(model, HOME, np.zeros(3), tau)
    assert np.linalg.norm(vdot) <= 1e-9
    # away from the symmetric home pose the statics balance forces only; the
    # orientation-locked model is the one in exact equilibrium there
    for p in random_workspace_points(20, 5):
        tau = mdl.winch_torque(model, mdl.static_tensions(model, (0.0, *p)), np.zeros(4), np.zeros(4))
        acc, _ = mdl.translational_accel(model, p, np.zeros(2), tau)
        assert np.linalg.norm(acc) <= 1e-9


def test_forward_dynamics_free_fall():
    # without spool inertia an unpowered robot falls freely with every cable slack
    m = RobotModel(motor_inertia=0.0)
    vdot, t, _ = mdl.forward_dynamics(m, HOME, np.zeros(3), np.zeros(4))
    np.testing.assert_allclose(vdot, [0, 0, -9.81], atol=1e-12)
    np.testing.assert_array_equal(t, 0.0)


def test_unpowered_fall_drags_spools(model):
    # with spool inertia the paying-out upper cables stay taut; lower ones go slack
    vdot, t, _ = mdl.forward_dynamics(model, HOME, np.zeros(3), np.zeros(4))
    assert -9.81 < vdot[2] < 0
    assert t[0] == t[3] == 0.0 and t[1] > 0 and t[2] > 0


def _random_state(rng, model):
    pose = np.array([rng.uniform(-0.3, 0.3), *rng.uniform([-1.0, -0.8], [1.0, 0.8])])
    twist = rng.normal(0, [0.5, 1.0, 1.0])
    tau = rng.uniform(-0.5, 3.5, 4)
    return pose, twist, tau


def test_power_balance_and_nonnegative_tensions(model):
    rng = np.random.default_rng(6)
    c = model.spool_mass
    G = np.diag([model.inertia_zz, model.mass, model.mass])
    for _ in range(500):
        pose, twist, tau = _random_state(rng, model)
        vdot, t, lddot = mdl.forward_dynamics(model, pose, twist, tau)
        assert np.all(t >= 0)
        W = mdl.wrench_matrix(model, pose)
        ldot = -W.T @ twist
        taut = t > 0
        # taut cables follow the (second-order-free) kinematic map
        assert np.abs(lddot[taut] - (-W.T @ vdot)[taut]).max(initial=0) <= 1e-9
        stored = twist @ G @ vdot + c * ldot @ lddot + model.mass * model.gravity * twist[2]
        supplied = np.sum((-tau / model.winch_radius + mdl.friction(model, ldot)) * ldot)
        assert stored == pytest.approx(supplied, abs=1e-6)


# --- linearization ------------------------------------------------------------------


@pytest.mark.parametrize("substeps", [1, 10])
def test_linearization_matches_finite_differences(model, substeps):
    rng = np.random.default_rng(7 + substeps)
    worst = 0.0
    for _ in range(500 if substeps == 1 else 100):
        x, u = taut_state(rng, model)
        A, B = mdl.linearize_dynamics(model, x, u, 0.01, substeps)
        Af, Bf = fd_jacobians(model, x, u, 0.01, substeps)
        for J, Jf in ((A, Af), (B, Bf)):
            worst = max(worst, np.abs(J - Jf).max() / np.abs(Jf).max())
    assert worst <= 1e-4


def test_slack_cable_has_no_control_authority(model):
    x = np.zeros(4)
    u = mdl.winch_torque(model, mdl.static_tensions(model, (0.0, 0.0, 0.0)), np.zeros(4), np.zeros(4))
    u[0] = -1.0  # paying out hard: cable 1 goes slack
    _, t = mdl.translational_accel(model, x[:2], x[2:], u)
    assert t[0] == 0.0
    _, B = mdl.linearize_dynamics(model, x, u, 0.01)
    assert np.abs(B[:, 0]).max() <= 1e-12


def test_double_integrator_block(model):
    u = mdl.winch_torque(model, mdl.static_tensions(model, (0.0, 0.2, 0.1)), np.zeros(4), np.zeros(4))
    A, _ = mdl.linearize_dynamics(model, np.array([0.2, 0.1, 0.0, 0.0]), u, 0.01)
    # semi-implicit Euler: p' = p + dt v', so dp'/dv = dt (I + dt dv'/dv)
    np.testing.assert_allclose(A[:2, 2:], 0.01 * A[2:, 2:], atol=1e-12)
    frictionless = model.replace(friction_coulomb=0.0, friction_viscous=0.0, motor_inertia=0.0)
    A, _ = mdl.linearize_dynamics(frictionless, np.array([0.2, 0.1, 0.0, 0.0]), u, 0.01)
    np.testing.assert_allclose(A[:2, 2:], 0.01 * np.eye(2), atol=1e-12)


# --- capability and workspace --------------------------------------------------------


def test_capability(model):
    v, a = mdl.capability(model, 600.0, 3.86, 2.0)
    assert v == pytest.approx(7.62, rel=5e-3)
    assert a == pytest.approx(94.5, rel=5e-3)
    v0, a0 = mdl.capability(model.replace(motor_inertia=0.0), 600.0, 3.86, 2.0)
    assert a0 == pytest.approx(3.86 / (2.0 * 0.0127))
    v2, _ = mdl.capability(model.replace(winch_radius=2 * 0.0127), 600.0, 3.86, 2.0)
    assert v2 == pytest.approx(2 * v)


def test_wfw_rectangle(model):
    r = mdl.wfw_rectangle(model, 0.05)
    assert r.contains_point((0.0, 0.0))
    assert r.ymax <= 1.22
    for x in np.arange(r.xmin, r.xmax + 1e-9, 0.1):
        for y in np.arange(r.ymin, r.ymax + 1e-9, 0.1):
            assert mdl.is_statically_feasible(model, (x, y))


def test_wfw_degenerate_tension_range(model):
    with pytest.raises(mdl.InfeasibleError):
        mdl.wfw_rectangle(model.replace(tension_min=5.0, tension_max=5.0), 0.1)


def test_wfw_monotone_in_tension_limit(model):
    areas = []
    for t_max in (200.0, 40.0, 15.0):
        r = mdl.wfw_rectangle(model.replace(tension_max=t_max), 0.1)
        areas.append(r.width * r.height)
    assert areas[0] >= areas[1] >= areas[2]
    assert areas[2] < areas[0]


def test_robot_config_round_trip(tmp_path, model):
    model.save(tmp_path / "r.json")
    back = RobotModel.load(tmp_path / "r.json")
    assert back.digest() == model.digest()
    with pytest.raises(ValueError, match="unknown robot config"):
        RobotModel.from_dict({"wheels": 4})
