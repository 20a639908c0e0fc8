"""Centroidal dynamics core: state/wrench value types, axis-wise models, integration.

The robot is reduced to its centroidal dynamics: the center of mass (CoM)
driven by the resultant contact force, and a base orientation (ZYX Euler
angles) driven by the resultant contact moment through a constant diagonal
inertia approximation.  Folding gravity into the resultant wrench

    f_bar = f - m * (0, 0, g)
    n_bar = n - c x f

turns the Newton-Euler equations into six decoupled triple integrators
(position, velocity, acceleration per axis, jerk input), which is what the
preview controller consumes.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Axis",
    "AxisSystem",
    "CentroidalState",
    "DegenerateContact",
    "FORCE_EPSILON",
    "ResultantWrench",
    "RobotParams",
    "WrenchFrame",
    "discretize_axis",
    "fold_gravity",
    "integrate_centroidal",
    "unfold_gravity",
    "zmp_from_wrench",
]

#: Vertical-force threshold (N) below which a ZMP is considered undefined.
FORCE_EPSILON = 1.0


class DegenerateContact(RuntimeError):
    """Raised when a ZMP is requested from a wrench with no usable vertical force."""


class WrenchFrame(enum.Enum):
    """Distinguishes the pure contact wrench from its gravity-folded form."""

    WITHOUT_GRAVITY = "without_gravity"  # f, n: resultant of contact wrenches only
    WITH_GRAVITY = "with_gravity"        # f_bar, n_bar: gravity folded in, moments about the CoM


class Axis(enum.Enum):
    """One of the six decoupled centroidal axes."""

    X = 0
    Y = 1
    Z = 2
    ROLL = 3
    PITCH = 4
    YAW = 5

    @property
    def is_angular(self) -> bool:
        return self.value >= 3


def _vec3(value, name: str) -> np.ndarray:
    v = np.asarray(value, dtype=float).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite, got {v}")
    v.flags.writeable = False
    return v


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    """Wrap angles to (-pi, pi]."""
    w = -((-a + math.pi) % (2.0 * math.pi) - math.pi)
    return w


def _cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors.

    np.cross spends most of its time normalizing axis arguments; the control
    loop crosses single vectors thousands of times per second, so spell it
    out.
    """
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


@dataclass(frozen=True)
class CentroidalState:
    """CoM and base-orientation state (positions, velocities, accelerations).

    Euler angles use the ZYX convention and are wrapped to (-pi, pi] on
    construction.  Accelerations are part of the state because the axis-wise
    models are triple integrators with jerk input.
    """

    com_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    com_vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    com_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    euler: np.ndarray = field(default_factory=lambda: np.zeros(3))
    euler_rate: np.ndarray = field(default_factory=lambda: np.zeros(3))
    euler_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("com_pos", "com_vel", "com_acc", "euler_rate", "euler_acc"):
            object.__setattr__(self, name, _vec3(getattr(self, name), name))
        eul = np.asarray(self.euler, dtype=float).reshape(3)
        if not np.all(np.isfinite(eul)):
            raise ValueError(f"euler must be finite, got {eul}")
        eul = _wrap_angle(eul)
        eul.flags.writeable = False
        object.__setattr__(self, "euler", eul)

    def axis_state(self, axis: Axis) -> np.ndarray:
        """(position, velocity, acceleration) triple for one axis."""
        i = axis.value
        if axis.is_angular:
            return np.array([self.euler[i - 3], self.euler_rate[i - 3], self.euler_acc[i - 3]])
        return np.array([self.com_pos[i], self.com_vel[i], self.com_acc[i]])


@dataclass(frozen=True)
class ResultantWrench:
    """Resultant 6D force/moment, tagged with its gravity-handling frame.

    WITHOUT_GRAVITY wrenches take moments about the world origin (sums of
    contact wrenches); WITH_GRAVITY wrenches are the gravity-folded form whose
    moment is taken about the CoM.
    """

    force: np.ndarray
    moment: np.ndarray
    frame: WrenchFrame

    def __post_init__(self):
        object.__setattr__(self, "force", _vec3(self.force, "force"))
        object.__setattr__(self, "moment", _vec3(self.moment, "moment"))
        if not isinstance(self.frame, WrenchFrame):
            raise TypeError(f"frame must be a WrenchFrame, got {self.frame!r}")

    def as_vector(self) -> np.ndarray:
        """Stacked (force, moment) 6-vector."""
        return np.concatenate([self.force, self.moment])

    @classmethod
    def from_vector(cls, w, frame: WrenchFrame) -> "ResultantWrench":
        w = np.asarray(w, dtype=float).reshape(6)
        return cls(force=w[:3], moment=w[3:], frame=frame)

    @classmethod
    def zero(cls, frame: WrenchFrame) -> "ResultantWrench":
        return cls(force=np.zeros(3), moment=np.zeros(3), frame=frame)


@dataclass(frozen=True)
class RobotParams:
    """Mass, gravity, and the constant diagonal inertia approximation."""

    mass: float
    gravity: float = 9.8
    inertia_diag: np.ndarray = field(default_factory=lambda: np.array([30.0, 30.0, 10.0]))

    def __post_init__(self):
        if not (np.isfinite(self.mass) and self.mass > 0.0):
            raise ValueError(f"mass must be positive, got {self.mass}")
        if not (np.isfinite(self.gravity) and self.gravity > 0.0):
            raise ValueError(f"gravity must be positive, got {self.gravity}")
        inertia = _vec3(self.inertia_diag, "inertia_diag")
        if not np.all(inertia > 0.0):
            raise ValueError(f"inertia_diag must be positive, got {inertia}")
        object.__setattr__(self, "inertia_diag", inertia)

    @property
    def weight_force(self) -> np.ndarray:
        """m * (0, 0, g), the force gravity must be balanced against."""
        return np.array([0.0, 0.0, self.mass * self.gravity])


@dataclass(frozen=True)
class AxisSystem:
    """Discrete-time triple-integrator model of one centroidal axis.

    State (pos, vel, acc), input jerk; outputs are (position, generalized
    force): the second output row is m * acc for linear axes and I_* * acc
    for angular axes, so reference forces/moments can be weighted directly.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dt: float
    axis: Axis

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float).reshape(3, 3)
        B = np.asarray(self.B, dtype=float).reshape(3, 1)
        C = np.asarray(self.C, dtype=float).reshape(2, 3)
        for m in (A, B, C):
            m.flags.writeable = False
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        if not (np.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError(f"dt must be positive, got {self.dt}")


def discretize_axis(params: RobotParams, axis: Axis, dt: float) -> AxisSystem:
    """Exact zero-order-hold discretization of one axis' triple integrator.

    The closed form keeps the preview gains consistent with the discrete
    model (no Euler discretization error):

        A_d = [[1, dt, dt^2/2], [0, 1, dt], [0, 0, 1]]
        B_d = (dt^3/6, dt^2/2, dt)
    """
    if not (np.isfinite(dt) and dt > 0.0):
        raise ValueError(f"dt must be positive, got {dt}")
    A = np.array([
        [1.0, dt, 0.5 * dt * dt],
        [0.0, 1.0, dt],
        [0.0, 0.0, 1.0],
    ])
    B = np.array([[dt ** 3 / 6.0], [0.5 * dt * dt], [dt]])
    scale = params.inertia_diag[axis.value - 3] if axis.is_angular else params.mass
    C = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, scale]])
    return AxisSystem(A=A, B=B, C=C, dt=dt, axis=axis)


def fold_gravity(w: ResultantWrench, com: np.ndarray, params: RobotParams) -> ResultantWrench:
    """Fold gravity into a contact wrench: f_bar = f - m g, n_bar = n - c x f."""
    if w.frame is not WrenchFrame.WITHOUT_GRAVITY:
        raise ValueError("fold_gravity expects a WITHOUT_GRAVITY wrench")
    com = np.asarray(com, dtype=float).reshape(3)
    force = w.force - params.weight_force
    moment = w.moment - _cross3(com, w.force)
    return ResultantWrench(force=force, moment=moment, frame=WrenchFrame.WITH_GRAVITY)


def unfold_gravity(w: ResultantWrench, com: np.ndarray, params: RobotParams) -> ResultantWrench:
    """Exact inverse of :func:`fold_gravity` at the same CoM position."""
    if w.frame is not WrenchFrame.WITH_GRAVITY:
        raise ValueError("unfold_gravity expects a WITH_GRAVITY wrench")
    com = np.asarray(com, dtype=float).reshape(3)
    force = w.force + params.weight_force
    moment = w.moment + _cross3(com, force)
    return ResultantWrench(force=force, moment=moment, frame=WrenchFrame.WITHOUT_GRAVITY)


def integrate_centroidal(
    state: CentroidalState,
    w_bar: ResultantWrench,
    params: RobotParams,
    dt: float,
) -> CentroidalState:
    """Advance the centroidal state one period under a gravity-folded wrench.

    Accelerations come directly from the wrench (c_ddot = f_bar / m,
    euler_ddot = n_bar / I elementwise); positions and velocities advance by
    semi-implicit Euler (velocity first, then position with the new
    velocity), which is cheap and adequate for a jerk-bounded system.
    """
    if w_bar.frame is not WrenchFrame.WITH_GRAVITY:
        raise ValueError("integrate_centroidal expects a WITH_GRAVITY wrench")
    if not (np.isfinite(dt) and dt > 0.0):
        raise ValueError(f"dt must be positive, got {dt}")
    com_acc = w_bar.force / params.mass
    euler_acc = w_bar.moment / params.inertia_diag
    com_vel = state.com_vel + dt * com_acc
    com_pos = state.com_pos + dt * com_vel
    euler_rate = state.euler_rate + dt * euler_acc
    euler = state.euler + dt * euler_rate
    return CentroidalState(
        com_pos=com_pos,
        com_vel=com_vel,
        com_acc=com_acc,
        euler=euler,
        euler_rate=euler_rate,
        euler_acc=euler_acc,
    )


def zmp_from_wrench(w: ResultantWrench, ground_height: float = 0.0) -> np.ndarray:
    """Zero-moment point of a contact wrench on the plane z = ground_height.

        z_x = (-n_y + p_z f_x) / f_z
        z_y = ( n_x + p_z f_y) / f_z

    Raises DegenerateContact when the vertical force is at or below
    FORCE_EPSILON (flight/degenerate phases have no meaningful ZMP).
    """
    if w.frame is not WrenchFrame.WITHOUT_GRAVITY:
        raise ValueError("zmp_from_wrench expects a WITHOUT_GRAVITY wrench")
    fz = w.force[2]
    if not np.isfinite(fz) or fz <= FORCE_EPSILON:
        raise DegenerateContact(f"vertical force {fz:.3g} N <= {FORCE_EPSILON} N")
    pz = float(ground_height)
    zx = (-w.moment[1] + pz * w.force[0]) / fz
    zy = (w.moment[0] + pz * w.force[1]) / fz
    return np.array([zx, zy])
