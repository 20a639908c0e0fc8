"""Centroidal wrench feedback and limb-end damping control.

The stabilizer adds a corrective gravity-folded wrench from CoM/orientation
tracking error; the damping controller turns per-limb wrench tracking error
into a compliance offset of the limb end (admittance with a spring pullback).
Rotation errors live in so(3) via rotation_log/rotation_exp rather than in
Euler space so the feedback stays well-behaved away from small angles.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import CentroidalState

__all__ = [
    "ComplianceState",
    "DampingParams",
    "DampingPhase",
    "InvalidRotation",
    "RateEstimator",
    "StabilizerGains",
    "centroidal_feedback",
    "contact_damping_params",
    "climbing_stabilizer_gains",
    "damping_step",
    "dcm_equivalent_gains",
    "default_stabilizer_gains",
    "euler_zyx_to_matrix",
    "non_contact_damping_params",
    "rotation_exp",
    "rotation_log",
]

# below this angle the log/exp use their quadratic series
_SMALL_ANGLE = 1e-5
# within this distance of pi the log switches to the eigenvector branch
_PI_BRANCH = 1e-3


class InvalidRotation(ValueError):
    """Matrix is not a proper rotation (orthonormality/determinant check)."""


def _vec6(v, name) -> np.ndarray:
    out = np.asarray(v, dtype=float).reshape(6)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} must be finite")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class StabilizerGains:
    """Diagonal PD gains on (CoM position, orientation) tracking error."""

    kp: np.ndarray  # (6,) linear xyz then angular xyz
    kd: np.ndarray  # (6,)

    def __post_init__(self):
        for name in ("kp", "kd"):
            v = _vec6(getattr(self, name), name)
            if np.any(v < 0.0):
                raise ValueError(f"{name} must be >= 0")
            object.__setattr__(self, name, v)


def default_stabilizer_gains() -> StabilizerGains:
    """Walking/multi-contact default: position-only PD, no orientation feedback."""
    return StabilizerGains(kp=[2000.0, 2000.0, 2000.0, 0.0, 0.0, 0.0],
                           kd=[666.0, 666.0, 666.0, 0.0, 0.0, 0.0])


def climbing_stabilizer_gains() -> StabilizerGains:
    """Stiffer variant with orientation feedback for ladder climbing."""
    return StabilizerGains(kp=[3000.0, 3000.0, 3000.0, 1000.0, 1000.0, 1000.0],
                           kd=[1000.0, 1000.0, 1000.0, 333.0, 333.0, 333.0])


class DampingPhase(enum.Enum):
    CONTACT = "contact"
    NON_CONTACT = "non_contact"


@dataclass(frozen=True)
class DampingParams:
    """Admittance parameters per axis: kd_damp * dr' = -ks * dr + kf * (w_a - w_d)."""

    kd_damp: np.ndarray  # (6,) strictly positive damping
    ks: np.ndarray       # (6,) spring pullback toward zero offset
    kf: np.ndarray       # (6,) wrench-error admittance
    phase: DampingPhase

    def __post_init__(self):
        for name in ("kd_damp", "ks", "kf"):
            v = _vec6(getattr(self, name), name)
            if name == "kd_damp":
                if np.any(v <= 0.0):
                    raise ValueError("kd_damp must be > 0")
            elif np.any(v < 0.0):
                raise ValueError(f"{name} must be >= 0")
            object.__setattr__(self, name, v)


def contact_damping_params(hand_kd: float | None = None) -> DampingParams:
    """Supporting-limb row: stiff damping, force tracking, yaw spring only.

    hand_kd optionally overrides the linear damping (hands on compliant or
    very stiff surfaces want a different admittance than feet).
    """
    kd_lin = 10000.0 if hand_kd is None else float(hand_kd)
    return DampingParams(
        kd_damp=[kd_lin, kd_lin, kd_lin, 100.0, 100.0, 100.0],
        ks=[0.0, 0.0, 0.0, 0.0, 0.0, 2000.0],
        kf=[1.0, 1.0, 1.0, 1.0, 1.0, 0.0],
        phase=DampingPhase.CONTACT,
    )


def non_contact_damping_params() -> DampingParams:
    """Swing-limb row: pure spring return to the commanded pose, no force terms."""
    return DampingParams(
        kd_damp=[300.0, 300.0, 300.0, 40.0, 40.0, 40.0],
        ks=[2250.0, 2250.0, 2250.0, 400.0, 400.0, 400.0],
        kf=[0.0] * 6,
        phase=DampingPhase.NON_CONTACT,
    )


@dataclass(frozen=True)
class ComplianceState:
    """Limb-end offset from the commanded pose: position and rotation vector."""

    delta_pos: np.ndarray
    delta_rot: np.ndarray

    def __post_init__(self):
        dp = np.asarray(self.delta_pos, dtype=float).reshape(3)
        dr = np.asarray(self.delta_rot, dtype=float).reshape(3)
        if not (np.all(np.isfinite(dp)) and np.all(np.isfinite(dr))):
            raise ValueError("compliance state must be finite")
        if np.linalg.norm(dr) >= math.pi:
            raise ValueError("rotation offset magnitude must stay below pi")
        dp.flags.writeable = False
        dr.flags.writeable = False
        object.__setattr__(self, "delta_pos", dp)
        object.__setattr__(self, "delta_rot", dr)

    @classmethod
    def zero(cls) -> "ComplianceState":
        return cls(delta_pos=np.zeros(3), delta_rot=np.zeros(3))

    @classmethod
    def _fast(cls, delta_pos: np.ndarray, delta_rot: np.ndarray) -> "ComplianceState":
        # Trusted constructor for the control loop: damping_step output is
        # finite and below pi by construction, so skip __post_init__.
        out = object.__new__(cls)
        object.__setattr__(out, "delta_pos", delta_pos)
        object.__setattr__(out, "delta_rot", delta_rot)
        return out


def euler_zyx_to_matrix(euler) -> np.ndarray:
    """(roll, pitch, yaw) -> R = Rz(yaw) Ry(pitch) Rx(roll)."""
    r, p, y = np.asarray(euler, dtype=float).reshape(3)
    cr, sr = math.cos(r), math.sin(r)
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def _check_rotation(R: np.ndarray):
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise InvalidRotation(f"expected a finite 3x3 matrix, got shape {R.shape}")
    if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6 or np.linalg.det(R) < 0.0:
        raise InvalidRotation("matrix failed the orthonormality/determinant check")


def _log_so3(R: np.ndarray) -> np.ndarray:
    """Log map for a trusted rotation matrix (no orthonormality check)."""
    r00, r01, r02, r10, r11, r12, r20, r21, r22 = R.ravel()
    theta = math.acos(min(1.0, max(-1.0, 0.5 * (r00 + r11 + r22 - 1.0))))
    skew = 0.5 * np.array([r21 - r12, r02 - r20, r10 - r01])
    if theta < _SMALL_ANGLE:
        # theta/sin(theta) ~ 1 + theta^2/6
        return (1.0 + theta * theta / 6.0) * skew
    if theta > math.pi - _PI_BRANCH:
        if theta > math.pi - 1e-6:
            warnings.warn(
                "rotation angle within 1e-6 of pi: log map sign is ill-conditioned",
                RuntimeWarning,
                stacklevel=2,
            )
        # near pi the skew part vanishes; the symmetric part stays
        # well-conditioned: (R + R')/2 = cos(th) I + (1 - cos(th)) a a',
        # and 1 - cos(th) ~ 2 here, so a a' comes out at machine precision
        c = 0.5 * (r00 + r11 + r22 - 1.0)
        M = (0.5 * (R + R.T) - c * np.eye(3)) / (1.0 - c)
        k = int(np.argmax(np.diagonal(M)))
        axis = M[:, k] / math.sqrt(M[k, k])
        if axis @ skew < 0.0:
            axis = -axis
        return theta * axis
    return (theta / math.sin(theta)) * skew


def _exp_so3(v: np.ndarray) -> np.ndarray:
    """Rodrigues map for a trusted (3,) float array, written out element-wise.

    Same series split as rotation_exp: below _SMALL_ANGLE the coefficients
    collapse to s = 1, c = 1/2 (I + K + K^2/2).
    """
    x, y, z = v
    theta2 = x * x + y * y + z * z
    if theta2 < _SMALL_ANGLE * _SMALL_ANGLE:
        s, c = 1.0, 0.5
    else:
        theta = math.sqrt(theta2)
        s = math.sin(theta) / theta
        c = (1.0 - math.cos(theta)) / theta2
    sx, sy, sz = s * x, s * y, s * z
    cxy, cxz, cyz = c * x * y, c * x * z, c * y * z
    cxx, cyy, czz = c * x * x, c * y * y, c * z * z
    return np.array([
        [1.0 - cyy - czz, cxy - sz, cxz + sy],
        [cxy + sz, 1.0 - cxx - czz, cyz - sx],
        [cxz - sy, cyz + sx, 1.0 - cxx - cyy],
    ])


def rotation_log(R) -> np.ndarray:
    """SO(3) log map -> rotation vector (axis * angle), angle in [0, pi]."""
    R = np.asarray(R, dtype=float)
    _check_rotation(R)
    return _log_so3(R)


def rotation_exp(v) -> np.ndarray:
    """SO(3) exp map: rotation vector -> matrix (Rodrigues, series for small angles)."""
    v = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValueError("rotation vector must be finite")
    return _exp_so3(v)


def centroidal_feedback(
    desired: CentroidalState, actual: CentroidalState, gains: StabilizerGains
) -> np.ndarray:
    """Corrective gravity-folded wrench from centroidal tracking error.

    Linear part: PD on CoM position/velocity.  Angular part: P on the SO(3)
    orientation error log(R_d R_a') plus D on the Euler-rate error.
    """
    rot_err = rotation_log(
        euler_zyx_to_matrix(desired.euler) @ euler_zyx_to_matrix(actual.euler).T
    )
    err_p = np.concatenate([desired.com_pos - actual.com_pos, rot_err])
    err_d = np.concatenate([
        desired.com_vel - actual.com_vel,
        desired.euler_rate - actual.euler_rate,
    ])
    return gains.kp * err_p + gains.kd * err_d


def _feedback_raw(des: np.ndarray, act: np.ndarray, gains: StabilizerGains) -> np.ndarray:
    """centroidal_feedback on raw (6, 3) state arrays (rows x/y/z/r/p/y, cols pos/vel/acc)."""
    if gains.kp[3] == 0.0 and gains.kp[4] == 0.0 and gains.kp[5] == 0.0:
        # position-only feedback: skip the SO(3) error entirely
        rot_err = np.zeros(3)
    else:
        rot_err = _log_so3(
            euler_zyx_to_matrix(des[3:, 0]) @ euler_zyx_to_matrix(act[3:, 0]).T
        )
    err_p = np.concatenate([des[:3, 0] - act[:3, 0], rot_err])
    return gains.kp * err_p + gains.kd * (des[:, 1] - act[:, 1])


def damping_step(
    state: ComplianceState,
    w_actual,
    w_desired,
    params: DampingParams,
    dt: float,
) -> ComplianceState:
    """Advance the limb-end compliance offset by one control period.

    Offset rate per axis: dr' = -(ks/kd) dr + (kf/kd) (w_a - w_d).  The
    position integrates with forward Euler; the rotation offset composes the
    rate on the left in SO(3) and re-extracts the rotation vector, which keeps
    the state a valid rotation for large offsets.
    """
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    err = np.asarray(w_actual, dtype=float).reshape(6) - \
        np.asarray(w_desired, dtype=float).reshape(6)
    rate = (-params.ks * _offset6(state) + params.kf * err) / params.kd_damp
    new_pos = state.delta_pos + dt * rate[:3]
    ang = dt * rate[3:]
    if ang[0] == 0.0 and ang[1] == 0.0 and ang[2] == 0.0:
        # exp(0) is the identity, so the composition leaves the offset alone
        new_rot = state.delta_rot
    else:
        new_rot = _log_so3(_exp_so3(ang) @ _exp_so3(state.delta_rot))
    return ComplianceState._fast(new_pos, new_rot)


def _offset6(state: ComplianceState) -> np.ndarray:
    return np.concatenate([state.delta_pos, state.delta_rot])


def dcm_equivalent_gains(mass: float, lipm_omega: float, k_xi) -> tuple[np.ndarray, np.ndarray]:
    """Horizontal CoM PD gains equivalent to divergent-component feedback.

    DCM tracking xi' = omega (xi - xi_d) with gain K_xi maps onto CoM PD with
    Kp = m omega^2 K_xi and Kd = m omega K_xi.  Returns (Kp, Kd) as 2x2
    matrices for the horizontal plane.
    """
    if mass <= 0.0 or lipm_omega <= 0.0:
        raise ValueError("mass and lipm_omega must be > 0")
    k_xi = np.asarray(k_xi, dtype=float).reshape(2, 2)
    return mass * lipm_omega ** 2 * k_xi, mass * lipm_omega * k_xi


class RateEstimator:
    """First-difference rate estimate with a first-order low-pass.

    Mirrors what a real state estimator feeds the stabilizer: raw finite
    differences are too noisy to multiply by a derivative gain, so the rate
    passes through a low-pass with time constant tau (default 20 ms).
    """

    def __init__(self, dim: int, tau: float = 0.02):
        if dim < 1 or tau < 0.0:
            raise ValueError("dim must be >= 1 and tau >= 0")
        self.tau = float(tau)
        self._prev: np.ndarray | None = None
        self.rate = np.zeros(dim)

    def update(self, value, dt: float) -> np.ndarray:
        if dt <= 0.0:
            raise ValueError("dt must be > 0")
        value = np.asarray(value, dtype=float).reshape(self.rate.shape)
        if self._prev is None:
            self._prev = value.copy()
            return self.rate.copy()
        raw = (value - self._prev) / dt
        self._prev = value.copy()
        if self.tau == 0.0:
            self.rate = raw
        else:
            alpha = 1.0 - math.exp(-dt / self.tau)
            self.rate = self.rate + alpha * (raw - self.rate)
        return self.rate.copy()
