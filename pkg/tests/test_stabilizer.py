"""Stabilizer: SO(3) maps, centroidal PD, limb damping, DCM gain mapping."""

import math
import warnings

import numpy as np
import pytest

from centroidal_control import (
    CentroidalState,
    ComplianceState,
    DampingParams,
    InvalidRotation,
    RateEstimator,
    StabilizerGains,
    centroidal_feedback,
    contact_damping_params,
    damping_step,
    dcm_equivalent_gains,
    default_stabilizer_gains,
    non_contact_damping_params,
    rotation_exp,
    rotation_log,
)
from centroidal_control.stabilizer import (
    DampingPhase,
    climbing_stabilizer_gains,
    euler_zyx_to_matrix,
)


# ---------------------------------------------------------------------------
# rotation helpers


def random_rotvec(rng, max_angle=math.pi - 0.05):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rng.uniform(0.0, max_angle) * axis


def test_exp_log_round_trip():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        v = random_rotvec(rng)
        back = rotation_log(rotation_exp(v))
        worst = max(worst, np.max(np.abs(back - v)))
    assert worst <= 1e-10


def test_exp_produces_rotation_matrices():
    rng = np.random.default_rng(2)
    for _ in range(50):
        R = rotation_exp(random_rotvec(rng))
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_small_angle_branch():
    v = np.array([1e-7, -2e-7, 5e-8])
    R = rotation_exp(v)
    # exp(v) ~ I + [v]_x at this scale
    assert np.allclose(R - np.eye(3), _skew(v), atol=1e-13)
    assert np.allclose(rotation_log(R), v, atol=1e-15)
    assert np.array_equal(rotation_exp(np.zeros(3)), np.eye(3))
    assert np.array_equal(rotation_log(np.eye(3)), np.zeros(3))


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def test_log_near_pi_branch():
    axis = np.array([1.0, 2.0, -1.0]) / np.sqrt(6.0)
    for angle in (math.pi - 5e-4, math.pi - 1e-5):
        v = angle * axis
        back = rotation_log(rotation_exp(v))
        assert np.allclose(back, v, atol=1e-8)


def test_log_at_exactly_pi():
    axis = np.array([0.6, 0.0, 0.8])
    with warnings.catch_warnings():
        warnings.simplefilter("error")  # the flag must fire
        with pytest.raises(RuntimeWarning):
            rotation_log(rotation_exp(math.pi * axis))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        back = rotation_log(rotation_exp(math.pi * axis))
    # at pi the sign of the axis is genuinely ambiguous
    assert np.allclose(np.abs(back), math.pi * np.abs(axis), atol=1e-6)


def test_log_rejects_non_rotations():
    with pytest.raises(InvalidRotation):
        rotation_log(2.0 * np.eye(3))
    with pytest.raises(InvalidRotation):
        rotation_log(np.diag([1.0, 1.0, -1.0]))  # reflection
    sheared = np.eye(3)
    sheared[0, 1] = 1e-3
    with pytest.raises(InvalidRotation):
        rotation_log(sheared)


def test_rotation_exp_rejects_non_finite():
    with pytest.raises(ValueError):
        rotation_exp([np.nan, 0.0, 0.0])


def test_euler_zyx_composition():
    rng = np.random.default_rng(3)
    for _ in range(20):
        r, p, y = rng.uniform(-1.2, 1.2, size=3)
        cr, sr = math.cos(r), math.sin(r)
        cp, sp = math.cos(p), math.sin(p)
        cy, sy = math.cos(y), math.sin(y)
        Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
        Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
        Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
        assert np.allclose(euler_zyx_to_matrix([r, p, y]), Rz @ Ry @ Rx, atol=1e-12)


# ---------------------------------------------------------------------------
# centroidal feedback


def test_feedback_zero_at_perfect_tracking():
    st = CentroidalState(com_pos=(0.1, -0.2, 0.83), euler=(0.2, -0.1, 0.4))
    dw = centroidal_feedback(st, st, climbing_stabilizer_gains())
    assert np.allclose(dw, np.zeros(6), atol=1e-12)


def test_feedback_linear_pd_by_hand():
    gains = default_stabilizer_gains()
    desired = CentroidalState(com_pos=(0.0, 0.0, 0.83))
    actual = CentroidalState(com_pos=(0.01, -0.02, 0.80), com_vel=(0.1, 0.0, -0.05))
    dw = centroidal_feedback(desired, actual, gains)
    assert np.allclose(dw[:3], [2000 * -0.01 - 666 * 0.1,
                                2000 * 0.02,
                                2000 * 0.03 + 666 * 0.05])
    # default gains have no orientation feedback
    assert np.array_equal(dw[3:], np.zeros(3))


def test_feedback_angular_uses_rotation_error():
    gains = climbing_stabilizer_gains()
    desired = CentroidalState(euler=(0.3, 0.0, 0.0))
    actual = CentroidalState(euler=(0.1, 0.0, 0.0), euler_rate=(0.5, 0.0, 0.0))
    dw = centroidal_feedback(desired, actual, gains)
    # pure roll error: log(Rx(0.3) Rx(0.1)') = 0.2 about x
    assert dw[3] == pytest.approx(1000.0 * 0.2 + 333.0 * -0.5, rel=1e-9)
    assert np.allclose(dw[4:], np.zeros(2), atol=1e-12)


def test_stabilizer_gains_validation():
    with pytest.raises(ValueError):
        StabilizerGains(kp=[-1.0] * 6, kd=[0.0] * 6)
    with pytest.raises(ValueError):
        StabilizerGains(kp=[0.0] * 5, kd=[0.0] * 6)


# ---------------------------------------------------------------------------
# limb damping control


def test_damping_pure_spring_decay_factor():
    """With no wrench error each linear axis decays by (1 - dt ks/kd) per step."""
    params = non_contact_damping_params()
    dt = 0.002
    state = ComplianceState(delta_pos=(0.01, -0.02, 0.03), delta_rot=(0.0, 0.0, 0.0))
    factor = 1.0 - dt * params.ks[0] / params.kd_damp[0]
    stepped = damping_step(state, np.zeros(6), np.zeros(6), params, dt)
    assert np.allclose(stepped.delta_pos, factor * np.asarray(state.delta_pos), atol=1e-15)
    assert np.array_equal(stepped.delta_rot, np.zeros(3))


def test_damping_angular_decay_keeps_the_axis():
    params = non_contact_damping_params()
    dt = 0.002
    axis = np.array([0.6, 0.0, 0.8])
    state = ComplianceState(delta_pos=np.zeros(3), delta_rot=0.3 * axis)
    for _ in range(200):
        state = damping_step(state, np.zeros(6), np.zeros(6), params, dt)
    mag = np.linalg.norm(state.delta_rot)
    assert 0.0 < mag < 0.3  # decayed
    assert np.allclose(state.delta_rot / mag, axis, atol=1e-10)  # same axis
    # same-axis composition is scalar: magnitude matches the 1-D recursion
    expect = 0.3 * (1.0 - dt * params.ks[3] / params.kd_damp[3]) ** 200
    assert mag == pytest.approx(expect, rel=1e-9)


def test_damping_force_error_drives_offset():
    """Contact rows: steady wrench error pushes the offset at kf/kd per second."""
    params = contact_damping_params()
    dt = 0.002
    err = np.array([10.0, 0.0, -20.0, 1.0, 0.0, 0.0])  # actual - desired
    state = damping_step(ComplianceState.zero(), err, np.zeros(6), params, dt)
    assert np.allclose(state.delta_pos, dt * params.kf[:3] * err[:3] / params.kd_damp[:3])
    assert np.allclose(state.delta_rot, dt * params.kf[3:] * err[3:] / params.kd_damp[3:])


def test_damping_table_defaults():
    c = contact_damping_params()
    assert c.phase is DampingPhase.CONTACT
    assert np.allclose(c.kd_damp, [10000, 10000, 10000, 100, 100, 100])
    assert np.allclose(c.ks, [0, 0, 0, 0, 0, 2000])
    assert np.allclose(c.kf, [1, 1, 1, 1, 1, 0])
    n = non_contact_damping_params()
    assert n.phase is DampingPhase.NON_CONTACT
    assert np.allclose(n.kd_damp, [300, 300, 300, 40, 40, 40])
    assert np.allclose(n.ks, [2250, 2250, 2250, 400, 400, 400])
    assert np.allclose(n.kf, np.zeros(6))
    h = contact_damping_params(hand_kd=1000.0)
    assert np.allclose(h.kd_damp[:3], [1000, 1000, 1000])
    assert np.allclose(h.kd_damp[3:], c.kd_damp[3:])


def test_damping_validation():
    with pytest.raises(ValueError):
        DampingParams(kd_damp=[0.0] * 6, ks=[0.0] * 6, kf=[0.0] * 6,
                      phase=DampingPhase.CONTACT)
    with pytest.raises(ValueError):
        DampingParams(kd_damp=[1.0] * 6, ks=[-1.0] * 6, kf=[0.0] * 6,
                      phase=DampingPhase.CONTACT)
    with pytest.raises(ValueError):
        damping_step(ComplianceState.zero(), np.zeros(6), np.zeros(6),
                     contact_damping_params(), 0.0)


def test_compliance_state_validation():
    with pytest.raises(ValueError):
        ComplianceState(delta_pos=(np.nan, 0, 0), delta_rot=(0, 0, 0))
    with pytest.raises(ValueError):
        ComplianceState(delta_pos=np.zeros(3), delta_rot=(math.pi, 0.0, 0.0))
    z = ComplianceState.zero()
    assert np.array_equal(z.delta_pos, np.zeros(3))
    assert np.array_equal(z.delta_rot, np.zeros(3))


# ---------------------------------------------------------------------------
# DCM-equivalent gains


def test_dcm_gain_mapping():
    rng = np.random.default_rng(4)
    for _ in range(20):
        m = rng.uniform(30.0, 150.0)
        omega = rng.uniform(1.0, 6.0)
        k_xi = np.diag(rng.uniform(0.5, 4.0, size=2))
        kp, kd = dcm_equivalent_gains(m, omega, k_xi)
        assert np.allclose(kp, m * omega ** 2 * k_xi, atol=1e-12)
        assert np.allclose(kd, m * omega * k_xi, atol=1e-12)
        # consistency: kp = omega * kd
        assert np.allclose(kp, omega * kd, atol=1e-9)


def test_dcm_gain_validation():
    with pytest.raises(ValueError):
        dcm_equivalent_gains(0.0, 3.0, np.eye(2))
    with pytest.raises(ValueError):
        dcm_equivalent_gains(105.0, -1.0, np.eye(2))


# ---------------------------------------------------------------------------
# rate estimator


def test_rate_estimator_tracks_a_ramp():
    est = RateEstimator(dim=3, tau=0.02)
    dt = 0.002
    slope = np.array([1.0, -2.0, 0.5])
    for k in range(200):
        rate = est.update(slope * (k * dt), dt)
    assert np.allclose(rate, slope, rtol=1e-6)


def test_rate_estimator_without_filter_is_first_difference():
    est = RateEstimator(dim=1, tau=0.0)
    assert np.array_equal(est.update([1.0], 0.1), [0.0])  # first call: no history
    assert np.allclose(est.update([1.5], 0.1), [5.0])
    assert np.allclose(est.update([1.5], 0.1), [0.0])


def test_rate_estimator_validation():
    with pytest.raises(ValueError):
        RateEstimator(dim=0)
    with pytest.raises(ValueError):
        RateEstimator(dim=3, tau=-1.0)
    est = RateEstimator(dim=3)
    with pytest.raises(ValueError):
        est.update(np.zeros(3), 0.0)
