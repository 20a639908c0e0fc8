"""Preview-servo gain synthesis and runtime evaluation for one centroidal axis.

Gains come from the infinite-horizon LQ output-tracking servo of the discrete
triple integrator: a discrete algebraic Riccati equation (DARE) solved by
fixed-point iteration yields the state feedback, and the feedforward sequence
previews N_h future reference samples.  References beyond the window are
treated as held at the final sample; their closed-form contribution (the
"tail gain") is what makes the servo exact at DC — without it, a truncated
window this short leaves a multi-percent steady-state offset.

At runtime the optimal jerk is a single dot product:

    u = -k_fb @ x + sum_i k_ff[i] @ y_ref[i] + k_ff_tail @ y_ref[-1]
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .core import Axis, AxisSystem, CentroidalState, ResultantWrench, WrenchFrame

__all__ = [
    "PlannerStack",
    "PreviewGains",
    "PreviewWeights",
    "RiccatiDivergence",
    "optimal_input",
    "plan_axes",
    "plan_step",
    "stack_gains",
    "synthesize_gains",
]

#: Fixed-point iteration controls for the DARE solve.
DARE_TOLERANCE = 1e-10
DARE_MAX_ITERATIONS = 100_000


class RiccatiDivergence(RuntimeError):
    """DARE fixed-point iteration failed to converge; carries the last residual."""

    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"Riccati iteration did not converge after {iterations} iterations "
            f"(last max-norm step {residual:.3e})"
        )
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class PreviewWeights:
    """Output/input weights and horizon for one axis' preview servo.

    Q weights the (position, generalized force) output pair; R penalizes the
    jerk input; horizon_steps is the number of previewed reference samples,
    each dt seconds apart.
    """

    Q: np.ndarray
    R: float
    horizon_steps: int
    dt: float

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.shape == (2,):
            Q = np.diag(Q)
        if Q.shape != (2, 2):
            raise ValueError(f"Q must be 2x2 (or its diagonal), got shape {Q.shape}")
        if not np.allclose(Q, np.diag(np.diag(Q))):
            raise ValueError("Q must be diagonal")
        if np.any(np.diag(Q) < 0.0) or not np.all(np.isfinite(Q)):
            raise ValueError(f"Q diagonal must be finite and >= 0, got {np.diag(Q)}")
        Q.flags.writeable = False
        object.__setattr__(self, "Q", Q)
        R = float(self.R)
        if not (np.isfinite(R) and R > 0.0):
            raise ValueError(f"R must be positive, got {R}")
        object.__setattr__(self, "R", R)
        n = int(self.horizon_steps)
        if n < 1:
            raise ValueError(f"horizon_steps must be >= 1, got {n}")
        object.__setattr__(self, "horizon_steps", n)
        if not (np.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError(f"dt must be positive, got {self.dt}")


@dataclass(frozen=True)
class PreviewGains:
    """Synthesized servo gains for one axis.

    k_fb is the 1x3 state feedback row; k_ff[i] is the 1x2 feedforward row
    applied to the i-th previewed (position, force) reference sample;
    k_ff_tail is the closed-form gain on the final sample standing in for the
    entire reference tail beyond the window (references are padded/held
    there).  closed_loop_spectral_radius is a diagnostic: max |eig(A - B k_fb)|.
    """

    k_fb: np.ndarray
    k_ff: np.ndarray
    k_ff_tail: np.ndarray
    closed_loop_spectral_radius: float

    def __post_init__(self):
        k_fb = np.ascontiguousarray(np.asarray(self.k_fb, dtype=float).reshape(1, 3))
        k_ff = np.ascontiguousarray(np.asarray(self.k_ff, dtype=float))
        if k_ff.ndim != 2 or k_ff.shape[1] != 2 or k_ff.shape[0] < 1:
            raise ValueError(f"k_ff must be (N_h, 2), got {k_ff.shape}")
        tail = np.asarray(self.k_ff_tail, dtype=float).reshape(2)
        for m in (k_fb, k_ff, tail):
            m.flags.writeable = False
        object.__setattr__(self, "k_fb", k_fb)
        object.__setattr__(self, "k_ff", k_ff)
        object.__setattr__(self, "k_ff_tail", tail)
        rho = float(self.closed_loop_spectral_radius)
        if not (np.isfinite(rho) and rho < 1.0):
            raise ValueError(f"closed-loop spectral radius must be < 1, got {rho}")
        object.__setattr__(self, "closed_loop_spectral_radius", rho)

    @property
    def horizon_steps(self) -> int:
        return self.k_ff.shape[0]


def _dare_fixed_point(A, B, Qt, R, tol=DARE_TOLERANCE, max_iter=DARE_MAX_ITERATIONS):
    """Solve P = A'PA - A'PB (R + B'PB)^-1 B'PA + Qt by value iteration.

    3x3 problems make plain fixed-point iteration cheap and dependable; the
    iterate is re-symmetrized each step to keep rounding from accumulating.
    """
    P = Qt.copy()
    for it in range(max_iter):
        BtP = B.T @ P
        S = R + BtP @ B
        K = np.linalg.solve(S, BtP @ A)
        Pn = A.T @ P @ A - (A.T @ BtP.T) @ K + Qt
        Pn = 0.5 * (Pn + Pn.T)
        step = np.max(np.abs(Pn - P))
        P = Pn
        if step <= tol:
            return P, it + 1
    raise RiccatiDivergence(max_iter, float(step))


def synthesize_gains(sys: AxisSystem, weights: PreviewWeights) -> PreviewGains:
    """Synthesize preview-servo gains for one axis.

    Solves the DARE for P, then

        S      = R + B'PB
        k_fb   = S^-1 B'PA
        k_ff[i]   = S^-1 B' (A_cl')^(i-1) C'Q      (A_cl = A - B k_fb)
        k_ff_tail = S^-1 B' (A_cl')^N_h (I - A_cl')^-1 C'Q

    The tail gain sums the geometric remainder of the feedforward series for
    a reference held constant at the final window sample; with it, a constant
    reference from its matched equilibrium state produces exactly zero input.
    Gains depend only on (mass or inertia, weights, dt): synthesizing twice
    yields identical arrays, so they are computed once and cached by callers.
    """
    if abs(sys.dt - weights.dt) > 1e-12:
        raise ValueError(
            f"system dt {sys.dt} does not match weights dt {weights.dt}; "
            "discretize the axis with the preview period"
        )
    A, B, C = sys.A, sys.B, sys.C
    Qt = C.T @ weights.Q @ C
    R = np.array([[weights.R]])
    P, _ = _dare_fixed_point(A, B, Qt, R)
    S = R + B.T @ P @ B
    k_fb = np.linalg.solve(S, B.T @ P @ A)
    A_cl = A - B @ k_fb
    rho = float(np.max(np.abs(np.linalg.eigvals(A_cl))))
    if rho >= 1.0:
        raise RiccatiDivergence(DARE_MAX_ITERATIONS, rho)

    SinvBt = np.linalg.solve(S, B.T)
    CtQ = C.T @ weights.Q
    n_h = weights.horizon_steps
    k_ff = np.empty((n_h, 2))
    M = np.eye(3)
    for i in range(n_h):
        k_ff[i] = SinvBt @ M @ CtQ
        M = A_cl.T @ M
    tail = (SinvBt @ M @ np.linalg.solve(np.eye(3) - A_cl.T, CtQ)).reshape(2)
    return PreviewGains(
        k_fb=k_fb,
        k_ff=k_ff,
        k_ff_tail=tail,
        closed_loop_spectral_radius=rho,
    )


def optimal_input(gains: PreviewGains, x: np.ndarray, y_ref_window: np.ndarray) -> float:
    """Optimal jerk for state x given the previewed reference window.

    The window must hold exactly horizon_steps (position, force) sample rows;
    pad by repeating the final sample when the trajectory runs out.  Single
    dot-product pass, no allocation beyond numpy temporaries.
    """
    window = np.asarray(y_ref_window, dtype=float)
    if window.shape != (gains.horizon_steps, 2):
        raise ValueError(
            f"reference window shape {window.shape} does not match "
            f"(horizon_steps, 2) = ({gains.horizon_steps}, 2)"
        )
    x = np.asarray(x, dtype=float).reshape(3)
    u = -float(gains.k_fb[0] @ x)
    u += float(np.dot(gains.k_ff.reshape(-1), window.reshape(-1)))
    u += float(gains.k_ff_tail @ window[-1])
    return u


_AXES = (Axis.X, Axis.Y, Axis.Z, Axis.ROLL, Axis.PITCH, Axis.YAW)


class PlannerStack(NamedTuple):
    """Six-axis preview gains restacked for a single vectorized plan step.

    All axes share the jerk-driven triple-integrator (A, B) — the discrete
    matrices do not depend on mass or inertia — so one (6,3) @ (3,3) matmul
    plus one einsum over the stacked feedforward gains advances every axis
    at once.  Built once per run via stack_gains.
    """

    A: np.ndarray            # (3, 3) shared state transition
    B: np.ndarray            # (3,) shared input column
    k_fb: np.ndarray         # (6, 3)
    k_ff: np.ndarray         # (6, N_h, 2)
    k_ff_tail: np.ndarray    # (6, 2)
    force_scale: np.ndarray  # (6,) mass / inertia output row of C


def stack_gains(systems, gains) -> PlannerStack:
    """Stack per-axis systems/gains for plan_axes' vectorized path.

    All six systems must share dt (hence A and B) and all six gain sets the
    same horizon.
    """
    if len(systems) != 6 or len(gains) != 6:
        raise ValueError("stack_gains needs six systems and six gain sets")
    A, B = systems[0].A, systems[0].B[:, 0]
    for s in systems[1:]:
        if not (np.array_equal(s.A, A) and np.array_equal(s.B[:, 0], B)):
            raise ValueError("axis systems must share dt to be stacked")
    horizons = {g.horizon_steps for g in gains}
    if len(horizons) != 1:
        raise ValueError(f"axis gains must share one horizon, got {horizons}")
    return PlannerStack(
        A=A.copy(),
        B=B.copy(),
        k_fb=np.stack([g.k_fb[0] for g in gains]),
        k_ff=np.ascontiguousarray(np.stack([g.k_ff for g in gains])),
        k_ff_tail=np.stack([g.k_ff_tail for g in gains]),
        force_scale=np.array([s.C[1, 2] for s in systems]),
    )


def plan_axes(systems, gains, axis_states, windows, stack: PlannerStack | None = None):
    """Advance six raw (pos, vel, acc) axis states one preview step.

    Returns (new 6x3 axis states, 6 jerks, gravity-folded planned wrench
    6-vector).  Working on raw arrays keeps angle wrapping out of the
    planner's feedback path (the cartwheel roll winds well past pi).

    Passing a precomputed stack_gains result skips the per-call restack;
    the control loop runs this every planner tick.
    """
    if stack is None:
        stack = stack_gains(systems, gains)
    windows = np.asarray(windows, dtype=float)
    if windows.shape != stack.k_ff.shape:
        raise ValueError(
            f"windows shape {windows.shape} does not match stacked gains "
            f"{stack.k_ff.shape}"
        )
    jerks = (
        -np.einsum("ij,ij->i", stack.k_fb, axis_states)
        + np.einsum("ink,ink->i", stack.k_ff, windows)
        + np.einsum("ik,ik->i", stack.k_ff_tail, windows[:, -1, :])
    )
    new_states = axis_states @ stack.A.T + jerks[:, None] * stack.B
    # output row 2 of C is (0, 0, m) or (0, 0, I_*): generalized force
    wrench = stack.force_scale * new_states[:, 2]
    return new_states, jerks, wrench


def plan_step(systems, gains, state: CentroidalState, windows):
    """Advance the planned centroidal state one preview period.

    systems/gains/windows are six-element sequences ordered (X, Y, Z, ROLL,
    PITCH, YAW) sharing dt and horizon.  Applies the optimal jerk per axis,
    steps each axis through its discrete model, and reads the planned
    gravity-folded resultant wrench off the new accelerations
    (f_bar = m c_ddot, n_bar = I euler_ddot).
    """
    if len(systems) != 6 or len(gains) != 6 or len(windows) != 6:
        raise ValueError("plan_step needs six systems, gains, and reference windows")
    axis_states = np.stack([state.axis_state(a) for a in _AXES])
    new_states, _, wrench = plan_axes(systems, gains, axis_states, windows)
    planned = CentroidalState(
        com_pos=new_states[:3, 0],
        com_vel=new_states[:3, 1],
        com_acc=new_states[:3, 2],
        euler=new_states[3:, 0],
        euler_rate=new_states[3:, 1],
        euler_acc=new_states[3:, 2],
    )
    w_bar = ResultantWrench(force=wrench[:3], moment=wrench[3:], frame=WrenchFrame.WITH_GRAVITY)
    return planned, w_bar
