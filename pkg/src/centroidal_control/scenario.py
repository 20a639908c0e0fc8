"""Scenario definitions and the reduced-model simulation harness.

A scenario is a timeline of contact phases plus reference-generation rules
and controller parameters.  The harness closes the loop around the reduced
centroidal plant:

    preview plan -> wrench projection -> integrate desired state ->
    centroidal feedback -> wrench distribution -> limb damping -> plant step

The planner runs on its own (coarser) grid: reference windows are sampled at
the preview period and the projected planned wrench is held zero-order
between planner ticks.  The plant is the same centroidal integrator driven by
the sum of per-limb wrenches, each tracking its command through a first-order
lag, plus any scheduled disturbance impulses.  There is no full-body model:
limb damping acts on bookkept compliance offsets, not on simulated joints.
"""
from __future__ import annotations

import enum
import importlib.resources
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .contacts import (
    DEFAULT_MARGIN,
    ContactMode,
    ContactSpec,
    GraspMatrix,
    assemble_grasp_matrix,
    polygon_margin,
    support_polygon,
)
from .core import (
    Axis,
    CentroidalState,
    DegenerateContact,
    ResultantWrench,
    RobotParams,
    WrenchFrame,
    _cross3,
    discretize_axis,
    zmp_from_wrench,
)
from .preview import PreviewWeights, plan_axes, stack_gains, synthesize_gains
from .stabilizer import (
    DampingParams,
    StabilizerGains,
    _exp_so3,
    _feedback_raw,
    _log_so3,
    contact_damping_params,
    default_stabilizer_gains,
    non_contact_damping_params,
    rotation_exp,
)
from .wrench import IterationLimit, distribute_desired_wrench, project_planned_wrench

__all__ = [
    "ContactPhase",
    "DisturbanceEvent",
    "EnvironmentMotion",
    "ReferenceRule",
    "ScenarioConfig",
    "TraceRow",
    "bench",
    "builtin_scenario_names",
    "emit_csv",
    "emit_summary",
    "generate_reference_window",
    "load_scenario",
    "run_closed_loop",
    "run_open_loop_generation",
    "save_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
]

SCHEMA_VERSION = 1

_AXES6 = (Axis.X, Axis.Y, Axis.Z, Axis.ROLL, Axis.PITCH, Axis.YAW)

# tolerance for phase lookups: phase boundaries authored as accumulated
# floats (0.8 + 0.4 + ...) can land a hair past the matching planner tick,
# which would split one instant across two contact sets
_PHASE_EPS = 1e-9


class ReferenceRule(enum.Enum):
    """How the CoM reference follows the contact timeline.

    CENTER_OF_CONTACTS: horizontal reference at the center of the supporting
    feet (all supporting contacts when no foot is in contact).
    CENTER_WITH_LATERAL_OFFSET: same, but single-foot phases shift the
    reference laterally inward by lateral_offset_m.
    FIXED_OFFSET_FROM_STRUCTURE: horizontal reference pinned to a world-frame
    anchor (structure_offset xy); its z entry adds to the height rule.
    """

    CENTER_OF_CONTACTS = "center_of_contacts"
    CENTER_WITH_LATERAL_OFFSET = "center_with_lateral_offset"
    FIXED_OFFSET_FROM_STRUCTURE = "fixed_offset_from_structure"


@dataclass(frozen=True)
class ContactPhase:
    """One segment of the contact timeline.

    limb_targets maps limb_id -> (position, euler) desired end pose; swing
    limbs appear here without a ContactSpec.
    """

    start_time: float
    end_time: float
    active_contacts: tuple[ContactSpec, ...]
    limb_targets: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if not (math.isfinite(self.start_time) and math.isfinite(self.end_time)):
            raise ValueError("phase times must be finite")
        if self.end_time <= self.start_time:
            raise ValueError(
                f"phase end {self.end_time} must exceed start {self.start_time}"
            )
        object.__setattr__(self, "active_contacts", tuple(self.active_contacts))

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time


@dataclass(frozen=True)
class DisturbanceEvent:
    """External impulse (N s / N m s) applied within one control step."""

    time: float
    impulse: np.ndarray

    def __post_init__(self):
        imp = np.asarray(self.impulse, dtype=float).reshape(6)
        imp.flags.writeable = False
        object.__setattr__(self, "impulse", imp)


@dataclass(frozen=True)
class EnvironmentMotion:
    """Sinusoidal motion of the environment under the listed limbs.

    Contact vertices translate along the contact normal with the given
    amplitude; tilt rotates the whole contact about its first tangent through
    the centroid.  Both share one period and start in phase at t = 0.
    """

    limb_ids: tuple[str, ...]
    translation_amplitude_m: float = 0.02
    tilt_amplitude_rad: float = math.radians(2.0)
    period_s: float = 2.0

    def __post_init__(self):
        if self.period_s <= 0.0:
            raise ValueError("period_s must be > 0")
        object.__setattr__(self, "limb_ids", tuple(self.limb_ids))


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete description of one simulation scenario."""

    name: str
    robot: RobotParams
    phases: tuple[ContactPhase, ...]
    reference_rule: ReferenceRule
    com_height_offset: float
    preview_linear: PreviewWeights
    preview_angular: PreviewWeights
    stabilizer_gains: StabilizerGains
    damping_contact: DampingParams = field(default_factory=contact_damping_params)
    damping_non_contact: DampingParams = field(default_factory=non_contact_damping_params)
    damping_overrides: dict[str, DampingParams] = field(default_factory=dict)
    lateral_offset_m: float = 0.0
    structure_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    control_dt: float = 0.002
    margin_m: float = DEFAULT_MARGIN
    wrench_lag_tau: float = 0.02
    fault_budget: int = 0
    disturbances: tuple[DisturbanceEvent, ...] = ()
    euler_keyframes: tuple[tuple[float, tuple[float, float, float]], ...] = ()
    environment_motion: EnvironmentMotion | None = None
    duration_s: float = 0.0
    initial_com: np.ndarray | None = None
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.control_dt <= 0.0:
            raise ValueError("control_dt must be > 0")
        if self.preview_linear.dt < self.control_dt - 1e-12:
            raise ValueError("preview period must be >= control_dt")
        if abs(self.preview_linear.dt - self.preview_angular.dt) > 1e-12:
            raise ValueError("linear and angular preview periods must match")
        if self.preview_linear.horizon_steps != self.preview_angular.horizon_steps:
            raise ValueError("linear and angular preview horizons must match")
        phases = tuple(self.phases)
        if not phases:
            raise ValueError("scenario needs at least one phase")
        if abs(phases[0].start_time) > 1e-9:
            raise ValueError("first phase must start at t = 0")
        for a, b in zip(phases, phases[1:]):
            if abs(a.end_time - b.start_time) > 1e-9:
                raise ValueError(
                    f"phases must be contiguous: {a.end_time} != {b.start_time}"
                )
        object.__setattr__(self, "phases", phases)
        duration = self.duration_s if self.duration_s > 0.0 else phases[-1].end_time
        if duration < phases[-1].end_time - 1e-9:
            raise ValueError("duration_s must cover the phase timeline")
        object.__setattr__(self, "duration_s", float(duration))
        object.__setattr__(self, "structure_offset",
                           np.asarray(self.structure_offset, dtype=float).reshape(3))
        if self.initial_com is not None:
            object.__setattr__(self, "initial_com",
                               np.asarray(self.initial_com, dtype=float).reshape(3))
        object.__setattr__(self, "disturbances", tuple(self.disturbances))
        object.__setattr__(self, "euler_keyframes", tuple(
            (float(t), tuple(float(v) for v in e)) for t, e in self.euler_keyframes
        ))
        if self.fault_budget < 0:
            raise ValueError("fault_budget must be >= 0")

    @property
    def limb_ids(self) -> tuple[str, ...]:
        """All limbs this scenario mentions (contacts and swing targets), sorted."""
        ids = set()
        for ph in self.phases:
            ids.update(c.limb_id for c in ph.active_contacts)
            ids.update(ph.limb_targets.keys())
        return tuple(sorted(ids))


def _is_foot(limb_id: str) -> bool:
    return "foot" in limb_id


def _supporting(contacts):
    """Contacts the height/center rules read: feet first, else everything."""
    feet = [c for c in contacts if _is_foot(c.limb_id)]
    return feet if feet else list(contacts)


class _ReferenceProgram:
    """Piecewise-constant CoM reference plus Euler keyframes, vectorized.

    Per-phase xy/z values are precomputed from the reference rule; window
    sampling is a searchsorted over phase start times, so building a full
    horizon window costs a handful of numpy ops.
    """

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        rule = cfg.reference_rule
        starts, xy, z = [], [], []
        # scenario centerline for the inward-offset rule
        foot_y = [c.centroid[1] for ph in cfg.phases for c in ph.active_contacts
                  if _is_foot(c.limb_id)]
        centerline = float(np.mean(foot_y)) if foot_y else 0.0
        for ph in cfg.phases:
            support = _supporting(ph.active_contacts)
            if not support:
                raise ValueError(f"phase at t={ph.start_time} has no contacts")
            centers = np.array([c.centroid for c in support])
            ref_xy = centers[:, :2].mean(axis=0)
            ref_z = centers[:, 2].mean() + cfg.com_height_offset
            if rule is ReferenceRule.CENTER_WITH_LATERAL_OFFSET and len(support) == 1:
                side = math.copysign(1.0, centers[0, 1] - centerline)
                ref_xy = ref_xy - np.array([0.0, side * cfg.lateral_offset_m])
            elif rule is ReferenceRule.FIXED_OFFSET_FROM_STRUCTURE:
                ref_xy = cfg.structure_offset[:2].copy()
                ref_z += cfg.structure_offset[2]
            starts.append(ph.start_time)
            xy.append(ref_xy)
            z.append(ref_z)
        self.starts = np.asarray(starts)
        self.xy = np.asarray(xy)
        self.z = np.asarray(z)
        if cfg.euler_keyframes:
            self.key_t = np.array([t for t, _ in cfg.euler_keyframes])
            self.key_e = np.array([e for _, e in cfg.euler_keyframes])
        else:
            self.key_t = None
            self.key_e = None
        self.horizon = cfg.preview_linear.horizon_steps
        self.dt = cfg.preview_linear.dt
        # reference sampled once over the whole run plus one horizon;
        # windows() slices this table instead of re-sampling every tick
        n_grid = int(round(cfg.duration_s / self.dt)) + self.horizon + 2
        self._grid = self.sample(self.dt * np.arange(n_grid))

    def _phase_of(self, times: np.ndarray) -> np.ndarray:
        return np.clip(
            np.searchsorted(self.starts, times + _PHASE_EPS, side="right") - 1,
            0, len(self.starts) - 1)

    def sample(self, times: np.ndarray) -> np.ndarray:
        """Reference (position rows only) at the given times: (6, len(times))."""
        idx = self._phase_of(times)
        out = np.zeros((6, times.shape[0]))
        out[0] = self.xy[idx, 0]
        out[1] = self.xy[idx, 1]
        out[2] = self.z[idx]
        if self.key_t is not None:
            for k in range(3):
                out[3 + k] = np.interp(times, self.key_t, self.key_e[:, k])
        return out

    def windows(self, t: float) -> np.ndarray:
        """Preview windows for all six axes from time t: (6, N_h, 2).

        Sample i covers t + (i+1) dt; the generalized-force reference rows
        stay zero (track position, let the servo place the wrench).
        """
        win = np.zeros((6, self.horizon, 2))
        k = int(round(t / self.dt))
        if abs(t - k * self.dt) < 1e-9 and 0 <= k <= self._grid.shape[1] - self.horizon - 1:
            win[:, :, 0] = self._grid[:, k + 1:k + 1 + self.horizon]
        else:  # off the planner grid: sample directly
            times = t + self.dt * np.arange(1, self.horizon + 1)
            win[:, :, 0] = self.sample(times)
        return win


def generate_reference_window(cfg: ScenarioConfig, t: float) -> np.ndarray:
    """Per-axis preview reference windows at time t, shape (6, N_h, 2)."""
    return _ReferenceProgram(cfg).windows(t)


# ---------------------------------------------------------------------------
# closed-loop harness


def _moved_contact(base: ContactSpec, em: EnvironmentMotion, t: float) -> ContactSpec:
    """Apply the environment's sinusoidal translation/tilt to one contact."""
    s = math.sin(2.0 * math.pi * t / em.period_s)
    verts = base.vertices + em.translation_amplitude_m * s * base.contact_normal
    normal = base.contact_normal
    tangents = base.tangent_basis
    if em.tilt_amplitude_rad != 0.0:
        rot = rotation_exp(em.tilt_amplitude_rad * s * tangents[0])
        c = verts.mean(axis=0)
        verts = (verts - c) @ rot.T + c
        normal = rot @ normal
        tangents = tangents @ rot.T
    return replace(base, vertices=verts, contact_normal=normal, tangent_basis=tangents)


def _merge_linear_rows(contact: DampingParams, fallback: DampingParams) -> DampingParams:
    """Contact params with the linear rows swapped for the fallback's."""
    take = lambda a, b: np.concatenate([b[:3], a[3:]])
    return DampingParams(
        kd_damp=take(contact.kd_damp, fallback.kd_damp),
        ks=take(contact.ks, fallback.ks),
        kf=take(contact.kf, fallback.kf),
        phase=contact.phase,
    )


class _PhaseRuntime:
    """Per-phase precomputation: grasp matrix, polygons, damping tables."""

    def __init__(self, cfg: ScenarioConfig, phase: ContactPhase, index: int):
        self.phase = phase
        self.index = index
        self.contacts = list(phase.active_contacts)
        self.active_ids = {c.limb_id for c in self.contacts}
        self.shrunk = [c.shrunk(cfg.margin_m) for c in self.contacts]
        self.grasp = assemble_grasp_matrix(self.shrunk) if self.contacts else None
        poly = support_polygon(self.shrunk)
        self.polygon = poly if poly.shape[0] >= 3 else None
        single = len(self.active_ids) == 1
        self.damping = {}
        for limb in cfg.limb_ids:
            if limb in self.active_ids:
                p = cfg.damping_overrides.get(limb, cfg.damping_contact)
                if single:
                    # lone support: soften the linear rows to the swing values
                    # to avoid fighting the full stack through one limb
                    p = _merge_linear_rows(p, cfg.damping_non_contact)
                self.damping[limb] = p
            else:
                self.damping[limb] = cfg.damping_non_contact
        # stacked (n_limbs, 6) tables in cfg.limb_ids order so the control
        # loop can run the admittance update for every limb at once
        ids = cfg.limb_ids
        self.kd_stack = np.stack([self.damping[l].kd_damp for l in ids])
        self.ks_stack = np.stack([self.damping[l].ks for l in ids])
        self.kf_stack = np.stack([self.damping[l].kf for l in ids])
        self.inactive_rows = np.array(
            [i for i, l in enumerate(ids) if l not in self.active_ids], dtype=int
        )

    def contacts_at(self, cfg: ScenarioConfig, t: float):
        """(shrunk contacts, grasp) at time t, moving world applied."""
        em = cfg.environment_motion
        if em is None or not self.contacts or not (
            self.active_ids & set(em.limb_ids)
        ):
            return self.shrunk, self.grasp
        moved = [
            _moved_contact(c, em, t) if c.limb_id in em.limb_ids else c
            for c in self.contacts
        ]
        shrunk = [c.shrunk(cfg.margin_m) for c in moved]
        return shrunk, assemble_grasp_matrix(shrunk)


@dataclass
class TraceRow:
    """One control step of a run; everything the CSV and summary need."""

    time: float
    phase_index: int
    plan_index: int
    fault: bool
    ref_pos: np.ndarray
    ref_euler: np.ndarray
    planned: CentroidalState
    desired: CentroidalState
    actual: CentroidalState
    w_planned: np.ndarray     # gravity-folded, pre-projection
    w_projected: np.ndarray   # gravity-folded, post-projection
    w_desired: np.ndarray     # gravity-folded, post-feedback
    w_actual: np.ndarray      # gravity-folded resultant the plant realized
    zmp_planned: np.ndarray   # from the cone wrench the projection realized
    zmp_desired: np.ndarray   # from the sum of distributed limb wrenches
    zmp_actual: np.ndarray    # from the plant's resultant
    zmp_margin_planned: float  # signed distance into the projected-onto region
    projection_error_force: float
    projection_error_moment: float
    proj_iterations: int
    proj_kkt: float
    dist_iterations: int
    dist_kkt: float
    limb_desired: dict[str, np.ndarray]
    limb_measured: dict[str, np.ndarray]
    limb_normal_force: dict[str, float]


def _axis_systems(cfg: ScenarioConfig):
    dt = cfg.preview_linear.dt
    return [discretize_axis(cfg.robot, axis, dt) for axis in _AXES6]


def _axis_gains(cfg: ScenarioConfig, systems):
    lin = synthesize_gains(systems[0], cfg.preview_linear)
    return [lin, lin, lin] + [
        synthesize_gains(systems[i], cfg.preview_angular) for i in (3, 4, 5)
    ]


def _safe_zmp(w: ResultantWrench) -> np.ndarray:
    try:
        return zmp_from_wrench(w)
    except DegenerateContact:
        return np.full(2, np.nan)


class _Simulation:
    """Mutable run state for the closed-loop harness (and the benchmarks)."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.limbs = cfg.limb_ids
        self.program = _ReferenceProgram(cfg)
        self.systems = _axis_systems(cfg)
        self.gains = _axis_gains(cfg, self.systems)
        self.stack = stack_gains(self.systems, self.gains)
        self.runtimes = [
            _PhaseRuntime(cfg, ph, i) for i, ph in enumerate(cfg.phases)
        ]
        self.phase_starts = np.array([ph.start_time for ph in cfg.phases])

        ref0 = self.program.sample(np.zeros(1))[:, 0]
        com0 = cfg.initial_com if cfg.initial_com is not None else ref0[:3]
        # planner, desired, and plant all start at rest on the reference
        self.plan_states = np.zeros((6, 3))
        self.plan_states[:3, 0] = com0
        self.plan_states[3:, 0] = ref0[3:]
        # desired and plant states evolve as raw (6, 3) arrays (rows x/y/z/
        # roll/pitch/yaw, columns pos/vel/acc); CentroidalState objects are
        # materialized only when a TraceRow is recorded
        self.desired_states = self.plan_states.copy()
        self.actual_states = self.plan_states.copy()
        self.inertia6 = np.concatenate([
            np.full(3, cfg.robot.mass), cfg.robot.inertia_diag,
        ])
        self.plan_index = 0
        self.w_planned = np.zeros(6)
        self.w_projected = np.zeros(6)
        # unfolded contact wrench actually realizable by the cone (G @ lam);
        # kept alongside the folded w_projected so ZMP bookkeeping reflects
        # what the contacts produce, not the residual-carrying refold
        self.w_proj_unfolded = np.concatenate([
            cfg.robot.weight_force, _cross3(com0, cfg.robot.weight_force),
        ])
        self.proj_polygon = self.runtimes[0].polygon
        self.proj_diag = (0, 0.0)  # iterations, kkt
        self.proj_fault = False
        self.dist_diag = (0, 0.0)
        # previous-solve lambdas reseed the NNLS passive sets while the
        # contact set (column layout) stays the same
        self.warm_proj = None
        self.warm_proj_rt = None
        self.warm_dist = None
        self.warm_dist_rt = None
        # per-limb state lives in arrays indexed by cfg.limb_ids order
        self.limb_index = {limb: i for i, limb in enumerate(self.limbs)}
        n_limbs = len(self.limbs)
        self.limb_desired = np.zeros((n_limbs, 6))
        self.limb_measured = np.zeros((n_limbs, 6))
        self.limb_normal = np.zeros(n_limbs)
        self.compliance = np.zeros((n_limbs, 6))  # [delta_pos, delta_rot] rows
        self.fault_count = 0
        self.lag_alpha = (
            1.0 if cfg.wrench_lag_tau <= 0.0
            else 1.0 - math.exp(-cfg.control_dt / cfg.wrench_lag_tau)
        )
        # warm-start the plant at static support so runs begin in equilibrium
        # rather than in a 20 ms free-fall while the wrench lag catches up
        shrunk0, grasp0 = self.runtimes[0].contacts_at(cfg, 0.0)
        if shrunk0:
            try:
                limbs, _ = distribute_desired_wrench(
                    ResultantWrench.zero(WrenchFrame.WITH_GRAVITY), com0,
                    shrunk0, cfg.robot, margin=0.0, grasp=grasp0,
                )
                for lw in limbs:
                    self.limb_desired[self.limb_index[lw.limb_id]] = lw.wrench_world
                    self.limb_measured[self.limb_index[lw.limb_id]] = lw.wrench_world
            except IterationLimit:
                pass

    @staticmethod
    def _wrap_state(axis_states: np.ndarray) -> CentroidalState:
        return CentroidalState(
            com_pos=axis_states[:3, 0], com_vel=axis_states[:3, 1],
            com_acc=axis_states[:3, 2], euler=axis_states[3:, 0],
            euler_rate=axis_states[3:, 1], euler_acc=axis_states[3:, 2],
        )

    def _integrate(self, states: np.ndarray, w_bar6: np.ndarray) -> np.ndarray:
        """integrate_centroidal on a raw (6, 3) array: acceleration from the
        gravity-folded wrench, then semi-implicit Euler."""
        out = np.empty((6, 3))
        out[:, 2] = w_bar6 / self.inertia6
        out[:, 1] = states[:, 1] + self.cfg.control_dt * out[:, 2]
        out[:, 0] = states[:, 0] + self.cfg.control_dt * out[:, 1]
        return out

    def runtime_at(self, t: float) -> _PhaseRuntime:
        i = int(np.searchsorted(self.phase_starts, t + _PHASE_EPS, side="right")) - 1
        if i < 0:
            i = 0
        elif i >= len(self.runtimes):
            i = len(self.runtimes) - 1
        return self.runtimes[i]

    def planner_tick(self) -> bool:
        """One preview step + wrench projection at the planner period.

        Returns True when the projection solver faulted (previous projected
        wrench is held in that case).
        """
        cfg = self.cfg
        tau = self.plan_index * self.program.dt
        windows = self.program.windows(tau)
        self.plan_states, _, self.w_planned = plan_axes(
            self.systems, self.gains, self.plan_states, windows, stack=self.stack
        )
        rt = self.runtime_at(tau)
        shrunk, grasp = rt.contacts_at(cfg, tau)
        com_p = self.plan_states[:3, 0]
        w_bar_p = ResultantWrench.from_vector(self.w_planned, WrenchFrame.WITH_GRAVITY)
        if rt is not self.warm_proj_rt:
            self.warm_proj = None
            self.warm_proj_rt = rt
        self.proj_fault = False
        try:
            projected, sol = project_planned_wrench(
                w_bar_p, com_p, shrunk, cfg.robot, margin=0.0, grasp=grasp,
                warm_start=self.warm_proj,
            )
            self.w_projected = projected.as_vector()
            self.w_proj_unfolded = grasp.columns @ sol.lam
            self.proj_polygon = rt.polygon
            self.proj_diag = (sol.iterations, sol.kkt_violation)
            self.warm_proj = sol.lam
        except IterationLimit:
            # hold the previous projected wrench; restart cold next tick
            self.proj_fault = True
            self.warm_proj = None
        self.plan_index += 1
        return self.proj_fault

    def control_step(self, k: int, record: bool = True) -> TraceRow | None:
        cfg = self.cfg
        t = k * cfg.control_dt
        fault = False
        while (self.plan_index * self.program.dt) <= t + 1e-12:
            fault |= self.planner_tick()
        rt = self.runtime_at(t)
        shrunk, grasp = rt.contacts_at(cfg, t)

        self.desired_states = self._integrate(self.desired_states, self.w_projected)
        dw = _feedback_raw(self.desired_states, self.actual_states, cfg.stabilizer_gains)
        w_des_vec = self.w_projected + dw
        w_des = ResultantWrench.from_vector(w_des_vec, WrenchFrame.WITH_GRAVITY)

        if rt is not self.warm_dist_rt:
            self.warm_dist = None
            self.warm_dist_rt = rt
        if shrunk:
            try:
                limbs, sol = distribute_desired_wrench(
                    w_des, self.actual_states[:3, 0], shrunk, cfg.robot,
                    margin=0.0, grasp=grasp, warm_start=self.warm_dist,
                )
                for lw in limbs:
                    i = self.limb_index[lw.limb_id]
                    self.limb_desired[i] = lw.wrench_world
                    self.limb_normal[i] = lw.wrench_local[2]
                if rt.inactive_rows.size:
                    self.limb_desired[rt.inactive_rows] = 0.0
                    self.limb_normal[rt.inactive_rows] = 0.0
                self.dist_diag = (sol.iterations, sol.kkt_violation)
                self.warm_dist = sol.lam
            except IterationLimit:
                fault = True  # reuse the previous distribution
                self.warm_dist = None
        else:
            self.limb_desired[:] = 0.0
            self.limb_normal[:] = 0.0

        # limb damping for every limb at once (same update as damping_step)
        rate = (rt.kf_stack * (self.limb_measured - self.limb_desired)
                - rt.ks_stack * self.compliance) / rt.kd_stack
        self.compliance[:, :3] += cfg.control_dt * rate[:, :3]
        ang = cfg.control_dt * rate[:, 3:]
        for i in range(ang.shape[0]):
            a = ang[i]
            if a[0] != 0.0 or a[1] != 0.0 or a[2] != 0.0:
                self.compliance[i, 3:] = _log_so3(
                    _exp_so3(a) @ _exp_so3(self.compliance[i, 3:])
                )

        # plant: first-order wrench response per limb, plus impulses
        self.limb_measured += self.lag_alpha * (self.limb_desired - self.limb_measured)
        resultant = self.limb_measured.sum(axis=0)
        for ev in cfg.disturbances:
            if t <= ev.time < t + cfg.control_dt:
                resultant = resultant + ev.impulse / cfg.control_dt
        # fold gravity into the plant resultant (moments about origin -> CoM)
        w_act_bar6 = np.empty(6)
        w_act_bar6[:3] = resultant[:3] - cfg.robot.weight_force
        w_act_bar6[3:] = resultant[3:] - _cross3(self.actual_states[:3, 0], resultant[:3])

        if fault:
            self.fault_count += 1

        row = None
        if record:
            row = self._record(t, rt, fault, w_des_vec, resultant, w_act_bar6)
        self.actual_states = self._integrate(self.actual_states, w_act_bar6)
        return row

    def _record(self, t, rt, fault, w_des_vec, w_act6, w_act_bar6) -> TraceRow:
        cfg = self.cfg
        ref = self.program.sample(np.array([t]))[:, 0]
        proj_res = self.w_projected - self.w_planned
        w_des_sum = self.limb_desired.sum(axis=0)
        zmp_planned = _safe_zmp(ResultantWrench.from_vector(
            self.w_proj_unfolded, WrenchFrame.WITHOUT_GRAVITY))
        margin = float("nan")
        if self.proj_polygon is not None and np.all(np.isfinite(zmp_planned)):
            margin = polygon_margin(self.proj_polygon, zmp_planned)
        return TraceRow(
            time=t,
            phase_index=rt.index,
            plan_index=self.plan_index,
            fault=fault,
            ref_pos=ref[:3].copy(),
            ref_euler=ref[3:].copy(),
            planned=self._wrap_state(self.plan_states),
            desired=self._wrap_state(self.desired_states),
            actual=self._wrap_state(self.actual_states),
            w_planned=self.w_planned.copy(),
            w_projected=self.w_projected.copy(),
            w_desired=w_des_vec.copy(),
            w_actual=w_act_bar6.copy(),
            zmp_planned=zmp_planned,
            zmp_desired=_safe_zmp(
                ResultantWrench.from_vector(w_des_sum, WrenchFrame.WITHOUT_GRAVITY)
            ),
            zmp_actual=_safe_zmp(
                ResultantWrench.from_vector(w_act6, WrenchFrame.WITHOUT_GRAVITY)
            ),
            zmp_margin_planned=margin,
            projection_error_force=float(np.linalg.norm(proj_res[:3])),
            projection_error_moment=float(np.linalg.norm(proj_res[3:])),
            proj_iterations=self.proj_diag[0],
            proj_kkt=self.proj_diag[1],
            dist_iterations=self.dist_diag[0],
            dist_kkt=self.dist_diag[1],
            limb_desired={l: self.limb_desired[i].copy()
                          for l, i in self.limb_index.items()},
            limb_measured={l: self.limb_measured[i].copy()
                           for l, i in self.limb_index.items()},
            limb_normal_force={l: float(self.limb_normal[i])
                               for l, i in self.limb_index.items()},
        )


def run_closed_loop(cfg: ScenarioConfig) -> list[TraceRow]:
    """Run the full control loop over the scenario; one TraceRow per step.

    Deterministic: no randomness anywhere in the loop.  Solver failures fall
    back to the previous step's wrench and count toward cfg.fault_budget
    (checked by the CLI, not here).
    """
    sim = _Simulation(cfg)
    n_steps = int(round(cfg.duration_s / cfg.control_dt))
    trace = []
    for k in range(n_steps):
        trace.append(sim.control_step(k))
    return trace


def run_open_loop_generation(cfg: ScenarioConfig) -> list[TraceRow]:
    """Trajectory generation only: preview + projection, plant follows plan.

    One TraceRow per planner tick (not per control step).  Feedback,
    distribution, and damping are skipped; desired and actual mirror the
    planned state, and the desired wrench mirrors the projected one.
    """
    sim = _Simulation(cfg)
    n_ticks = int(round(cfg.duration_s / sim.program.dt))
    trace = []
    for _ in range(n_ticks):
        if sim.planner_tick():
            sim.fault_count += 1
        t = (sim.plan_index - 1) * sim.program.dt
        rt = sim.runtime_at(t)
        state = sim._wrap_state(sim.plan_states)
        ref = sim.program.sample(np.array([t]))[:, 0]
        proj_res = sim.w_projected - sim.w_planned
        zmp_planned = _safe_zmp(ResultantWrench.from_vector(
            sim.w_proj_unfolded, WrenchFrame.WITHOUT_GRAVITY))
        margin = float("nan")
        if sim.proj_polygon is not None and np.all(np.isfinite(zmp_planned)):
            margin = polygon_margin(sim.proj_polygon, zmp_planned)
        zero6 = np.zeros(6)
        trace.append(TraceRow(
            time=t,
            phase_index=rt.index,
            plan_index=sim.plan_index,
            fault=sim.proj_fault,
            ref_pos=ref[:3].copy(),
            ref_euler=ref[3:].copy(),
            planned=state,
            desired=state,
            actual=state,
            w_planned=sim.w_planned.copy(),
            w_projected=sim.w_projected.copy(),
            w_desired=sim.w_projected.copy(),
            w_actual=sim.w_projected.copy(),
            zmp_planned=zmp_planned,
            zmp_desired=zmp_planned.copy(),
            zmp_actual=zmp_planned.copy(),
            zmp_margin_planned=margin,
            projection_error_force=float(np.linalg.norm(proj_res[:3])),
            projection_error_moment=float(np.linalg.norm(proj_res[3:])),
            proj_iterations=sim.proj_diag[0],
            proj_kkt=sim.proj_diag[1],
            dist_iterations=0,
            dist_kkt=0.0,
            limb_desired={limb: zero6 for limb in sim.limbs},
            limb_measured={limb: zero6 for limb in sim.limbs},
            limb_normal_force={limb: 0.0 for limb in sim.limbs},
        ))
    return trace


# ---------------------------------------------------------------------------
# benchmarks


def bench(cfg: ScenarioConfig, component: str, iterations: int = 10_000,
          warmup: int = 1_000) -> dict:
    """Wall-clock statistics (microseconds) for one pipeline component.

    Components: "preview" (six-axis plan step), "projection",
    "distribution", "total_step" (full control step with a forced planner
    tick, the worst-case step).  The run is warmed up first; preview,
    projection, and distribution are timed on frozen mid-run problems, the
    total step on the live evolving simulation.
    """
    if component not in ("preview", "projection", "distribution", "total_step"):
        raise ValueError(f"unknown bench component {component!r}")
    sim = _Simulation(cfg)
    # roll into the scenario so grasp matrices, caches, and state are warm
    settle = min(int(round(cfg.duration_s / cfg.control_dt)) - 1,
                 max(warmup, int(0.5 / cfg.control_dt)))
    for k in range(settle):
        sim.control_step(k, record=False)
    t_mid = settle * cfg.control_dt
    rt = sim.runtime_at(t_mid)
    shrunk, grasp = rt.contacts_at(cfg, t_mid)

    samples = np.empty(iterations)
    if component == "preview":
        windows = sim.program.windows(t_mid)
        states = sim.plan_states.copy()
        args = (sim.systems, sim.gains, states, windows)
        for _ in range(min(warmup, 2000)):
            plan_axes(*args, stack=sim.stack)
        for i in range(iterations):
            t0 = time.perf_counter()
            plan_axes(*args, stack=sim.stack)
            samples[i] = time.perf_counter() - t0
    elif component in ("projection", "distribution"):
        w = ResultantWrench.from_vector(
            sim.w_planned if component == "projection" else sim.w_projected,
            WrenchFrame.WITH_GRAVITY,
        )
        com = sim.actual_states[:3, 0].copy()
        fn = project_planned_wrench if component == "projection" \
            else distribute_desired_wrench
        # warm-started like the control loop: the passive set carries over
        # between consecutive solves against the same grasp matrix
        lam = None
        for _ in range(min(warmup, 2000)):
            _, sol = fn(w, com, shrunk, cfg.robot, margin=0.0, grasp=grasp,
                        warm_start=lam)
            lam = sol.lam
        for i in range(iterations):
            t0 = time.perf_counter()
            _, sol = fn(w, com, shrunk, cfg.robot, margin=0.0, grasp=grasp,
                        warm_start=lam)
            samples[i] = time.perf_counter() - t0
            lam = sol.lam
    else:  # total_step
        for i in range(iterations):
            # force a planner tick every step: worst-case full pipeline
            sim.plan_index = min(sim.plan_index,
                                 int(t_mid / sim.program.dt))
            t0 = time.perf_counter()
            sim.control_step(int(round(t_mid / cfg.control_dt)), record=False)
            samples[i] = time.perf_counter() - t0

    us = samples * 1e6
    return {
        "component": component,
        "iterations": int(iterations),
        "mean_us": float(np.mean(us)),
        "p50_us": float(np.percentile(us, 50)),
        "p90_us": float(np.percentile(us, 90)),
        "p99_us": float(np.percentile(us, 99)),
        "max_us": float(np.max(us)),
    }


# ---------------------------------------------------------------------------
# trace emission


def _csv_columns(limb_ids) -> list[str]:
    cols = ["t", "phase", "plan_index", "fault"]
    cols += [f"ref_{s}" for s in ("x", "y", "z", "roll", "pitch", "yaw")]
    for tag in ("plan", "des", "act"):
        cols += [f"{tag}_{s}" for s in
                 ("x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw")]
    for tag in ("wplan", "wproj", "wdes", "wact"):
        cols += [f"{tag}_{s}" for s in ("fx", "fy", "fz", "nx", "ny", "nz")]
    cols += ["zmp_plan_x", "zmp_plan_y", "zmp_des_x", "zmp_des_y",
             "zmp_act_x", "zmp_act_y", "zmp_margin_plan",
             "proj_err_force", "proj_err_moment",
             "proj_iters", "proj_kkt", "dist_iters", "dist_kkt"]
    for limb in limb_ids:
        cols += [f"{limb}_des_{s}" for s in ("fx", "fy", "fz", "nx", "ny", "nz")]
        cols += [f"{limb}_meas_{s}" for s in ("fx", "fy", "fz", "nx", "ny", "nz")]
    return cols


def _state_nine(st: CentroidalState) -> list[float]:
    return [*st.com_pos, *st.com_vel, *st.euler]


def _row_values(row: TraceRow, limb_ids) -> list[float]:
    vals = [row.time, row.phase_index, row.plan_index, int(row.fault)]
    vals += [*row.ref_pos, *row.ref_euler]
    vals += _state_nine(row.planned) + _state_nine(row.desired) + _state_nine(row.actual)
    vals += [*row.w_planned, *row.w_projected, *row.w_desired, *row.w_actual]
    vals += [*row.zmp_planned, *row.zmp_desired, *row.zmp_actual,
             row.zmp_margin_planned,
             row.projection_error_force, row.projection_error_moment,
             row.proj_iterations, row.proj_kkt,
             row.dist_iterations, row.dist_kkt]
    zero6 = (0.0,) * 6
    for limb in limb_ids:
        vals += [*row.limb_desired.get(limb, zero6)]
        vals += [*row.limb_measured.get(limb, zero6)]
    return vals


def emit_csv(trace: list[TraceRow], path) -> None:
    """Write the trace as CSV: fixed header, 9 significant digits."""
    if not trace:
        raise ValueError("refusing to write an empty trace")
    limb_ids = sorted(trace[0].limb_desired.keys())
    cols = _csv_columns(limb_ids)
    try:
        with open(path, "w") as f:
            f.write(",".join(cols) + "\n")
            for row in trace:
                f.write(",".join("%.9g" % v for v in _row_values(row, limb_ids)) + "\n")
    except OSError as e:
        raise OSError(f"failed writing trace to {path}: {e}") from e


def emit_summary(trace: list[TraceRow]) -> dict:
    """Aggregate run metrics as a JSON-friendly dict."""
    if not trace:
        raise ValueError("cannot summarize an empty trace")
    pf = np.array([r.projection_error_force for r in trace])
    pm = np.array([r.projection_error_moment for r in trace])
    margins = np.array([r.zmp_margin_planned for r in trace])
    ref = np.array([r.ref_pos for r in trace])
    des = np.array([r.desired.com_pos for r in trace])
    act = np.array([r.actual.com_pos for r in trace])
    err_da = np.linalg.norm(des - act, axis=1)
    err_ra = np.linalg.norm(ref - act, axis=1)
    limb_ids = sorted(trace[0].limb_desired.keys())
    peak_normal = {
        limb: float(max(abs(r.limb_normal_force.get(limb, 0.0)) for r in trace))
        for limb in limb_ids
    }
    summary = {
        "steps": len(trace),
        "duration_s": float(trace[-1].time + (trace[1].time - trace[0].time
                                              if len(trace) > 1 else 0.0)),
        "fault_count": int(sum(r.fault for r in trace)),
        "mean_projection_error_force_N": float(pf.mean()),
        "mean_projection_error_moment_Nm": float(pm.mean()),
        "max_projection_error_force_N": float(pf.max()),
        "max_projection_error_moment_Nm": float(pm.max()),
        "min_zmp_margin_planned_m": (
            float(np.nanmin(margins)) if np.any(np.isfinite(margins)) else float("nan")
        ),
        "rmse_com_desired_vs_actual_m": float(np.sqrt(np.mean(err_da ** 2))),
        "rmse_com_reference_vs_actual_m": float(np.sqrt(np.mean(err_ra ** 2))),
        "max_com_reference_error_m": float(err_ra.max()),
        "final_com_m": [float(v) for v in trace[-1].actual.com_pos],
        "peak_limb_normal_force_N": peak_normal,
    }
    return summary


# ---------------------------------------------------------------------------
# scenario (de)serialization


def _contact_to_dict(c: ContactSpec) -> dict:
    return {
        "limb_id": c.limb_id,
        "vertices": np.asarray(c.vertices).tolist(),
        "contact_normal": np.asarray(c.contact_normal).tolist(),
        "tangent_basis": np.asarray(c.tangent_basis).tolist(),
        "friction_coeff": float(c.friction_coeff),
        "mode": c.mode.value,
        "ridge_count_per_vertex": int(c.ridge_count_per_vertex),
    }


def _contact_from_dict(d: dict) -> ContactSpec:
    return ContactSpec(
        limb_id=d["limb_id"],
        vertices=np.asarray(d["vertices"]),
        contact_normal=np.asarray(d["contact_normal"]),
        tangent_basis=np.asarray(d["tangent_basis"]),
        friction_coeff=d["friction_coeff"],
        mode=ContactMode(d["mode"]),
        ridge_count_per_vertex=d.get("ridge_count_per_vertex", 4),
    )


def _damping_to_dict(p: DampingParams) -> dict:
    return {
        "kd_damp": p.kd_damp.tolist(),
        "ks": p.ks.tolist(),
        "kf": p.kf.tolist(),
        "phase": p.phase.value,
    }


def _damping_from_dict(d: dict) -> DampingParams:
    from .stabilizer import DampingPhase

    return DampingParams(
        kd_damp=d["kd_damp"], ks=d["ks"], kf=d["kf"],
        phase=DampingPhase(d["phase"]),
    )


def _weights_to_dict(w: PreviewWeights) -> dict:
    return {
        "Q": np.diag(w.Q).tolist(),
        "R": float(w.R),
        "horizon_steps": int(w.horizon_steps),
        "dt": float(w.dt),
    }


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    """Plain-data form of a scenario (YAML/JSON safe)."""
    return {
        "schema_version": cfg.schema_version,
        "name": cfg.name,
        "robot": {
            "mass": cfg.robot.mass,
            "gravity": cfg.robot.gravity,
            "inertia_diag": np.asarray(cfg.robot.inertia_diag).tolist(),
        },
        "reference_rule": cfg.reference_rule.value,
        "com_height_offset": cfg.com_height_offset,
        "lateral_offset_m": cfg.lateral_offset_m,
        "structure_offset": cfg.structure_offset.tolist(),
        "preview_linear": _weights_to_dict(cfg.preview_linear),
        "preview_angular": _weights_to_dict(cfg.preview_angular),
        "stabilizer_gains": {
            "kp": cfg.stabilizer_gains.kp.tolist(),
            "kd": cfg.stabilizer_gains.kd.tolist(),
        },
        "damping_contact": _damping_to_dict(cfg.damping_contact),
        "damping_non_contact": _damping_to_dict(cfg.damping_non_contact),
        "damping_overrides": {
            limb: _damping_to_dict(p) for limb, p in sorted(cfg.damping_overrides.items())
        },
        "control_dt": cfg.control_dt,
        "margin_m": cfg.margin_m,
        "wrench_lag_tau": cfg.wrench_lag_tau,
        "fault_budget": cfg.fault_budget,
        "duration_s": cfg.duration_s,
        "initial_com": None if cfg.initial_com is None else cfg.initial_com.tolist(),
        "disturbances": [
            {"time": ev.time, "impulse": ev.impulse.tolist()} for ev in cfg.disturbances
        ],
        "euler_keyframes": [
            {"time": t, "euler": list(e)} for t, e in cfg.euler_keyframes
        ],
        "environment_motion": None if cfg.environment_motion is None else {
            "limb_ids": list(cfg.environment_motion.limb_ids),
            "translation_amplitude_m": cfg.environment_motion.translation_amplitude_m,
            "tilt_amplitude_rad": cfg.environment_motion.tilt_amplitude_rad,
            "period_s": cfg.environment_motion.period_s,
        },
        "phases": [
            {
                "start_time": ph.start_time,
                "end_time": ph.end_time,
                "active_contacts": [_contact_to_dict(c) for c in ph.active_contacts],
                "limb_targets": {
                    limb: {"position": np.asarray(p).tolist(),
                           "euler": np.asarray(e).tolist()}
                    for limb, (p, e) in sorted(ph.limb_targets.items())
                },
            }
            for ph in cfg.phases
        ],
    }


def scenario_from_dict(d: dict) -> ScenarioConfig:
    version = d.get("schema_version", 1)
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported scenario schema_version {version}")
    robot = RobotParams(
        mass=d["robot"]["mass"],
        gravity=d["robot"].get("gravity", 9.8),
        inertia_diag=tuple(d["robot"].get("inertia_diag", (30.0, 30.0, 10.0))),
    )
    phases = tuple(
        ContactPhase(
            start_time=ph["start_time"],
            end_time=ph["end_time"],
            active_contacts=tuple(_contact_from_dict(c) for c in ph["active_contacts"]),
            limb_targets={
                limb: (np.asarray(tg["position"]), np.asarray(tg["euler"]))
                for limb, tg in ph.get("limb_targets", {}).items()
            },
        )
        for ph in d["phases"]
    )
    em = d.get("environment_motion")
    return ScenarioConfig(
        name=d["name"],
        robot=robot,
        phases=phases,
        reference_rule=ReferenceRule(d["reference_rule"]),
        com_height_offset=d["com_height_offset"],
        preview_linear=PreviewWeights(**d["preview_linear"]),
        preview_angular=PreviewWeights(**d["preview_angular"]),
        stabilizer_gains=StabilizerGains(**d["stabilizer_gains"]),
        damping_contact=_damping_from_dict(d["damping_contact"]),
        damping_non_contact=_damping_from_dict(d["damping_non_contact"]),
        damping_overrides={
            limb: _damping_from_dict(p)
            for limb, p in d.get("damping_overrides", {}).items()
        },
        lateral_offset_m=d.get("lateral_offset_m", 0.0),
        structure_offset=np.asarray(d.get("structure_offset", [0.0, 0.0, 0.0])),
        control_dt=d.get("control_dt", 0.002),
        margin_m=d.get("margin_m", DEFAULT_MARGIN),
        wrench_lag_tau=d.get("wrench_lag_tau", 0.02),
        fault_budget=d.get("fault_budget", 0),
        disturbances=tuple(
            DisturbanceEvent(time=ev["time"], impulse=np.asarray(ev["impulse"]))
            for ev in d.get("disturbances", [])
        ),
        euler_keyframes=tuple(
            (kf["time"], tuple(kf["euler"])) for kf in d.get("euler_keyframes", [])
        ),
        environment_motion=None if em is None else EnvironmentMotion(
            limb_ids=tuple(em["limb_ids"]),
            translation_amplitude_m=em.get("translation_amplitude_m", 0.02),
            tilt_amplitude_rad=em.get("tilt_amplitude_rad", math.radians(2.0)),
            period_s=em.get("period_s", 2.0),
        ),
        duration_s=d.get("duration_s", 0.0),
        initial_com=None if d.get("initial_com") is None
        else np.asarray(d["initial_com"]),
        schema_version=version,
    )


def save_scenario(cfg: ScenarioConfig, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(scenario_to_dict(cfg), f, sort_keys=False)


def builtin_scenario_names() -> list[str]:
    root = importlib.resources.files("centroidal_control") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_scenario(name_or_path) -> ScenarioConfig:
    """Load a scenario by bundled name ("stand", "walk_flat", ...) or path."""
    path = str(name_or_path)
    if path.endswith((".yaml", ".yml")):
        try:
            with open(path) as f:
                data = yaml.safe_load(f)
        except OSError as e:
            raise OSError(f"failed reading scenario {path}: {e}") from e
    else:
        res = importlib.resources.files("centroidal_control") / "scenarios" / f"{path}.yaml"
        try:
            data = yaml.safe_load(res.read_text())
        except FileNotFoundError:
            raise FileNotFoundError(
                f"no bundled scenario {path!r}; available: {builtin_scenario_names()}"
            ) from None
    return scenario_from_dict(data)
