import numpy as np
import pytest

from neuroform.dynamics import (
    AgentDynamicsParams,
    CircleProfile,
    FormationInstance,
    FormationOffsets,
    LeaderProfile,
    LinearProfile,
    WaypointProfile,
    eval_f,
    eval_g,
    eval_g_scalar,
    leader_state,
    offset_consistency_residual,
    stacked_rhs,
    velocity_monomials,
)
from neuroform.exceptions import ConfigError, DimensionError
from neuroform.experiments import make_exp1
from neuroform.topology import Topology


def params(mass=0.5, amp=0.0, freq=0.0, phase=0.0, f_mat=None):
    if f_mat is None:
        f_mat = np.zeros((3, 6))
    return AgentDynamicsParams(
        mass=mass, amp=amp * np.ones(3), freq=freq * np.ones(3),
        phase=phase * np.ones(3), f_mat=f_mat,
    )


def test_eval_f_gravity_only():
    p = params(mass=0.5)
    x = np.array([1.0, -2.0, 3.0, 0.4, 0.5, 0.6])
    assert np.allclose(eval_f(p, x, t=12.3), [0.0, 0.0, 19.62], rtol=0, atol=1e-14)


def test_eval_f_zero_velocity_kills_coupling():
    f_mat = np.hstack([np.eye(3), np.zeros((3, 3))])
    p = params(mass=1.0, f_mat=f_mat)
    x = np.array([5.0, 6.0, 7.0, 0.0, 0.0, 0.0])
    assert np.allclose(eval_f(p, x, 3.0), [0.0, 0.0, 9.81], rtol=0, atol=1e-14)


def test_eval_f_phase_zero_sinusoid_vanishes_at_t0():
    f_mat = np.arange(18.0).reshape(3, 6) / 18.0
    p = params(mass=1.0, amp=0.5, freq=0.0, phase=0.0, f_mat=f_mat)
    v = np.array([0.3, -0.2, 0.1])
    x = np.concatenate([np.zeros(3), v])
    expected = np.array([0.0, 0.0, 9.81]) + f_mat @ velocity_monomials(v)
    assert np.allclose(eval_f(p, x, t=0.0), expected, rtol=0, atol=1e-14)


def test_velocity_monomials_layout():
    v = np.array([2.0, 3.0, 5.0])
    assert np.array_equal(velocity_monomials(v), [4.0, 9.0, 25.0, 6.0, 10.0, 15.0])


def test_eval_g_identity_at_origin():
    p = params(mass=1.0)
    assert np.array_equal(eval_g(p, np.zeros(6), 0.0), np.eye(3))


def test_eval_g_half_mass_peak_sine():
    p = params(mass=0.5)
    t = 5.0 * np.pi  # sin(0.1 t) = 1
    g = eval_g(p, np.zeros(6), t)
    assert np.allclose(g, 3.0 * np.eye(3), rtol=0, atol=1e-12)


def test_eval_g_symmetric_positive_definite():
    rng = np.random.default_rng(0)
    for _ in range(20):
        p = params(mass=rng.uniform(0.1, 1.0))
        x = rng.standard_normal(6) * 5
        g = eval_g(p, x, rng.uniform(0, 100))
        assert np.array_equal(g, g.T)
        assert np.linalg.eigvalsh(g)[0] > 0


def test_linear_profile_is_exact_double_integrator():
    p0, v = np.array([1.0, 2.0, 3.0]), np.array([-0.5, 0.25, 1.0])
    prof = LinearProfile(p0, v)
    for t in (0.0, 1.7, 42.0):
        pos, vel, acc = leader_state(prof, t)
        assert np.array_equal(pos, p0 + v * t)
        assert np.array_equal(vel, v)
        assert np.array_equal(acc, np.zeros(3))


def test_leader_state_rejects_negative_time():
    with pytest.raises(ConfigError):
        leader_state(LinearProfile(np.zeros(3), np.zeros(3)), -1.0)


def test_single_waypoint_degenerates_to_stationary():
    w = np.array([4.0, 5.0, 6.0])
    prof = WaypointProfile([w], total_duration=10.0)
    for t in (0.0, 3.0, 100.0):
        pos, vel, acc = prof.state(t)
        assert np.array_equal(pos, w)
        assert np.array_equal(vel, np.zeros(3))
        assert np.array_equal(acc, np.zeros(3))


def test_empty_waypoints_rejected():
    with pytest.raises(ConfigError):
        WaypointProfile([], total_duration=10.0)


def test_waypoint_path_finite_difference_consistency():
    rng = np.random.default_rng(42)
    wp = rng.uniform(-10, 10, (4, 3))
    prof = WaypointProfile(wp, total_duration=40.0)
    h = 1e-6
    for t in (3.1, 17.7, 29.3, 38.2):
        pos_p, vel, _ = prof.state(t)
        # forward difference: (p(t+h) - p(t))/h - v = O(h)
        fwd = (prof.state(t + h)[0] - prof.state(t)[0]) / h
        assert np.linalg.norm(fwd - vel) < 1e-4
        # centered differences: O(h^2)
        cpos = (prof.state(t + h)[0] - prof.state(t - h)[0]) / (2 * h)
        assert np.linalg.norm(cpos - vel) < 1e-8 * max(1, np.linalg.norm(vel))
        cvel = (prof.state(t + h)[1] - prof.state(t - h)[1]) / (2 * h)
        assert np.linalg.norm(cvel - prof.state(t)[2]) < 1e-7


def test_waypoint_path_clamps_after_duration():
    rng = np.random.default_rng(1)
    wp = rng.uniform(-5, 5, (3, 3))
    prof = WaypointProfile(wp, total_duration=10.0)
    pos, vel, acc = prof.state(25.0)
    assert np.array_equal(pos, wp[-1])
    assert np.array_equal(vel, np.zeros(3))
    # clamped spline: zero velocity at both ends
    assert np.linalg.norm(prof.state(10.0 - 1e-9)[1]) < 1e-7


def test_circle_profile_matches_initial_state():
    p0 = np.array([5.0, 2.0, 10.0])
    v0 = np.array([0.0039, -0.9836, 0.0])
    prof = CircleProfile.from_initial_state(p0, v0, radius=5.0)
    pos, vel, acc = prof.state(0.0)
    assert np.allclose(pos, p0, rtol=0, atol=1e-12)
    assert np.allclose(vel, v0, rtol=0, atol=1e-12)
    # command stays bounded: |u0| = radius * omega^2
    assert abs(np.linalg.norm(acc) - prof.radius * prof.omega**2) < 1e-12
    h = 1e-6
    for t in (0.5, 20.0):
        cpos = (prof.state(t + h)[0] - prof.state(t - h)[0]) / (2 * h)
        assert np.linalg.norm(cpos - prof.state(t)[1]) < 1e-8


def test_leader_profile_dict_round_trip():
    profs = [
        LinearProfile(np.array([1.0, 2, 3]), np.array([0.1, 0.2, 0.3])),
        CircleProfile.from_initial_state(
            np.array([5.0, 2, 10]), np.array([0.0039, -0.9836, 0]), 5.0),
        WaypointProfile(np.arange(12.0).reshape(4, 3), total_duration=40.0),
    ]
    for prof in profs:
        again = LeaderProfile.from_dict(prof.to_dict())
        for t in (0.0, 7.3, 39.0):
            for a, b in zip(prof.state(t), again.state(t)):
                assert np.array_equal(a, b)


def test_stacked_rhs_velocity_cancellation():
    inst, _ = make_exp1(seed=3)
    x = inst.x_init
    t = 2.5
    f = inst.f_stacked(x, t)
    g = inst.g_scalars(x, t)
    u = (-f / g[:, None]).reshape(-1)
    dx = stacked_rhs(inst, x, u, t)
    nn = 15
    assert np.array_equal(dx[:nn], x[nn:])
    assert np.allclose(dx[nn:], 0.0, rtol=0, atol=1e-12)


def test_stacked_rhs_matches_per_agent_loop():
    inst, _ = make_exp1(seed=4)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(30)
    u = rng.standard_normal(15)
    t = 1.234
    dx = stacked_rhs(inst, x, u, t)
    for i in range(5):
        xi = np.concatenate([x[3 * i : 3 * i + 3], x[15 + 3 * i : 15 + 3 * i + 3]])
        fi = eval_f(inst.dyn[i], xi, t)
        gi = eval_g_scalar(inst.dyn[i], xi, t)
        acc_i = fi + gi * u[3 * i : 3 * i + 3]
        assert np.array_equal(dx[15 + 3 * i : 15 + 3 * i + 3], acc_i)


def test_stacked_rhs_dimension_mismatch():
    inst, _ = make_exp1(seed=0)
    with pytest.raises(DimensionError):
        stacked_rhs(inst, inst.x_init, np.zeros(7), 0.0)
    with pytest.raises(DimensionError):
        inst.split_state(np.zeros(29))


def test_offsets_enforce_antisymmetry():
    FormationOffsets({(1, 2): [1.0, 0, 0], (2, 1): [-1.0, 0, 0]}, {}, n=3)
    with pytest.raises(ConfigError):
        FormationOffsets({(1, 2): [1.0, 0, 0], (2, 1): [1.0, 0, 0]}, {}, n=3)


def test_missing_offset_is_config_error():
    topo = Topology.create(2, [(1, 2)], (1, 0))
    offs = FormationOffsets({}, {1: np.zeros(3)}, n=3)
    with pytest.raises(ConfigError):
        offs.validate_against(topo)


def test_exp1_offsets_are_consistent():
    inst, _ = make_exp1(seed=0)
    assert inst.offset_residual < 1e-10
    assert offset_consistency_residual(inst.topology, inst.offsets) < 1e-10


def test_instance_dict_round_trip():
    inst, _ = make_exp1(seed=9)
    again = FormationInstance.from_dict(inst.to_dict())
    assert np.array_equal(again.x_init, inst.x_init)
    assert again.topology == inst.topology
    x = inst.x_init
    assert np.array_equal(again.f_stacked(x, 1.0), inst.f_stacked(x, 1.0))
    assert np.array_equal(again.g_scalars(x, 1.0), inst.g_scalars(x, 1.0))


def test_instance_rejects_wrong_state_size():
    inst, _ = make_exp1(seed=0)
    with pytest.raises(DimensionError):
        FormationInstance(
            leader=inst.leader, dyn=inst.dyn, offsets=inst.offsets,
            topology=inst.topology, x_init=np.zeros(7),
        )


def test_dynamics_terms_matches_separate_calls():
    inst, _ = make_exp1(seed=1)
    rng = np.random.default_rng(2)
    x = rng.standard_normal(30) * 3
    f, g = inst.dynamics_terms(x, 0.7)
    assert np.array_equal(f, inst.f_stacked(x, 0.7))
    assert np.array_equal(g, inst.g_scalars(x, 0.7))
