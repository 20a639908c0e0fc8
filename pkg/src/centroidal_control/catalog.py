"""Bundled scenario builders: multi-contact motions on the reduced model.

Each builder returns a ScenarioConfig ready for run_closed_loop (the
cartwheel is meant for run_open_loop_generation).  Geometry is deliberately
simple — rectangular foot soles, square palm pads, line-shaped toe and rung
contacts — because only contact positions, normals, and friction enter the
reduced model.
"""
from __future__ import annotations

import math

import numpy as np

from .contacts import ContactMode, ContactSpec
from .core import RobotParams
from .preview import PreviewWeights
from .scenario import (
    ContactPhase,
    EnvironmentMotion,
    ReferenceRule,
    ScenarioConfig,
)
from .stabilizer import (
    climbing_stabilizer_gains,
    contact_damping_params,
    default_stabilizer_gains,
)

__all__ = [
    "SCENARIO_BUILDERS",
    "build_cartwheel",
    "build_hands_support",
    "build_handrail_stairs",
    "build_moving_environment",
    "build_stand",
    "build_vertical_ladder",
    "build_walk_flat",
    "build_walk_with_hands",
    "build_scenario",
    "foot_contact",
    "pad_contact",
    "rung_grasp",
    "swing_cubic",
    "toe_contact",
]

FOOT_HALF_LENGTH = 0.1
FOOT_HALF_WIDTH = 0.05
FRICTION = 0.6
COM_HEIGHT = 0.83

_X = np.array([1.0, 0.0, 0.0])
_Y = np.array([0.0, 1.0, 0.0])
_Z = np.array([0.0, 0.0, 1.0])


def _preview_linear() -> PreviewWeights:
    return PreviewWeights(Q=(2e2, 5e-4), R=1e-8, horizon_steps=400, dt=0.005)


def _preview_angular() -> PreviewWeights:
    return PreviewWeights(Q=(1e2, 5e-3), R=1e-8, horizon_steps=400, dt=0.005)


def foot_contact(limb_id: str, center, z: float = 0.0) -> ContactSpec:
    """Rectangular sole on a horizontal surface (0.2 x 0.1 m)."""
    cx, cy = float(center[0]), float(center[1])
    verts = np.array([
        [cx - FOOT_HALF_LENGTH, cy - FOOT_HALF_WIDTH, z],
        [cx + FOOT_HALF_LENGTH, cy - FOOT_HALF_WIDTH, z],
        [cx + FOOT_HALF_LENGTH, cy + FOOT_HALF_WIDTH, z],
        [cx - FOOT_HALF_LENGTH, cy + FOOT_HALF_WIDTH, z],
    ])
    return ContactSpec(
        limb_id=limb_id, vertices=verts, contact_normal=_Z,
        tangent_basis=np.stack([_X, _Y]), friction_coeff=FRICTION,
    )


def pad_contact(limb_id: str, center, normal, half_size: float = 0.04) -> ContactSpec:
    """Square palm pad on a plane with the given (axis-aligned) normal."""
    center = np.asarray(center, dtype=float)
    normal = np.asarray(normal, dtype=float)
    normal = normal / np.linalg.norm(normal)
    # pick two tangents orthogonal to the normal
    seed = _Z if abs(normal @ _Z) < 0.9 else _X
    t1 = np.cross(seed, normal)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(normal, t1)
    verts = np.array([
        center - half_size * t1 - half_size * t2,
        center + half_size * t1 - half_size * t2,
        center + half_size * t1 + half_size * t2,
        center - half_size * t1 + half_size * t2,
    ])
    return ContactSpec(
        limb_id=limb_id, vertices=verts, contact_normal=normal,
        tangent_basis=np.stack([t1, t2]), friction_coeff=FRICTION,
    )


def toe_contact(limb_id: str, center, half_width: float = 0.05) -> ContactSpec:
    """Toe-line contact (two vertices) for standing on a ladder rung."""
    center = np.asarray(center, dtype=float)
    verts = np.array([center - half_width * _Y, center + half_width * _Y])
    return ContactSpec(
        limb_id=limb_id, vertices=verts, contact_normal=_Z,
        tangent_basis=np.stack([_X, _Y]), friction_coeff=FRICTION,
    )


def rung_grasp(limb_id: str, center, half_width: float = 0.06) -> ContactSpec:
    """Bilateral grasp of a horizontal rung (two vertices along the rung)."""
    center = np.asarray(center, dtype=float)
    verts = np.array([center - half_width * _Y, center + half_width * _Y])
    return ContactSpec(
        limb_id=limb_id, vertices=verts, contact_normal=-_X,
        tangent_basis=np.stack([_Y, _Z]), friction_coeff=FRICTION,
        mode=ContactMode.GRASP,
    )


def swing_cubic(p_start, p_end, clearance: float, s: float) -> np.ndarray:
    """Swing-limb position at normalized phase s in [0, 1].

    Cubic ease between the endpoints plus a half-sine vertical clearance;
    purely descriptive in the reduced model (drives desired limb poses only).
    """
    s = min(1.0, max(0.0, float(s)))
    blend = 3.0 * s * s - 2.0 * s ** 3
    p = (1.0 - blend) * np.asarray(p_start, float) + blend * np.asarray(p_end, float)
    p[2] += clearance * math.sin(math.pi * s)
    return p


def _pose(contact: ContactSpec):
    return (contact.centroid, np.zeros(3))


def _targets(contacts) -> dict:
    return {c.limb_id: _pose(c) for c in contacts}


def _base_config(name, phases, *, rule=ReferenceRule.CENTER_OF_CONTACTS, **kw):
    defaults = dict(
        name=name,
        robot=RobotParams(mass=105.0),
        phases=tuple(phases),
        reference_rule=rule,
        com_height_offset=COM_HEIGHT,
        preview_linear=_preview_linear(),
        preview_angular=_preview_angular(),
        stabilizer_gains=default_stabilizer_gains(),
    )
    defaults.update(kw)
    return ScenarioConfig(**defaults)


def build_stand(duration: float = 5.0) -> ScenarioConfig:
    """Double-support stand, feet 0.3 m apart: the regulation baseline."""
    feet = (foot_contact("left_foot", (0.0, 0.15)),
            foot_contact("right_foot", (0.0, -0.15)))
    phase = ContactPhase(0.0, duration, feet, _targets(feet))
    return _base_config("stand", [phase])


def _gait_phases(placements, hands=()):
    """Alternating-support walk phases from a footstep plan.

    placements: list of (limb_id, x, y, z) landing positions in step order;
    both feet start at x of the first two entries.  Timing: 0.8 s initial
    double support, per step 0.8 s single support + 0.4 s double support,
    1.0 s final stand.
    """
    stance = {p[0]: p[1:] for p in placements[:2]}
    hands = tuple(hands)

    def feet_contacts():
        return tuple(foot_contact(limb, (x, y), z) for limb, (x, y, z) in
                     sorted(stance.items()))

    phases = []
    t = 0.8
    phases.append(ContactPhase(0.0, t, feet_contacts() + hands,
                               _targets(feet_contacts() + hands)))
    for limb, x, y, z in placements[2:]:
        support = tuple(
            foot_contact(other, (sx, sy), sz)
            for other, (sx, sy, sz) in sorted(stance.items()) if other != limb
        )
        swing_target = {limb: (np.array([x, y, z]), np.zeros(3))}
        phases.append(ContactPhase(t, t + 0.8, support + hands,
                                   {**_targets(support + hands), **swing_target}))
        t += 0.8
        stance[limb] = (x, y, z)
        phases.append(ContactPhase(t, t + 0.4, feet_contacts() + hands,
                                   _targets(feet_contacts() + hands)))
        t += 0.4
    phases.append(ContactPhase(t, t + 1.0, feet_contacts() + hands,
                               _targets(feet_contacts() + hands)))
    return phases


def build_walk_flat(n_steps: int = 6, stride: float = 0.3) -> ScenarioConfig:
    """Flat-ground walk: alternating single/double support, 300 mm strides."""
    placements = [("left_foot", 0.0, 0.1, 0.0), ("right_foot", 0.0, -0.1, 0.0)]
    x = 0.0
    limb = "left_foot"
    for _ in range(n_steps):
        x += stride
        y = 0.1 if limb == "left_foot" else -0.1
        placements.append((limb, x, y, 0.0))
        limb = "right_foot" if limb == "left_foot" else "left_foot"
    return _base_config("walk_flat", _gait_phases(placements))


def build_walk_with_hands(n_steps: int = 3, stride: float = 0.3) -> ScenarioConfig:
    """Corridor walk with palms pressed on both side walls throughout."""
    placements = [("left_foot", 0.0, 0.1, 0.0), ("right_foot", 0.0, -0.1, 0.0)]
    x = 0.0
    limb = "left_foot"
    for _ in range(n_steps):
        x += stride
        y = 0.1 if limb == "left_foot" else -0.1
        placements.append((limb, x, y, 0.0))
        limb = "right_foot" if limb == "left_foot" else "left_foot"
    hands = (
        pad_contact("left_hand", (x / 2.0, 0.45, 1.0), -_Y),
        pad_contact("right_hand", (x / 2.0, -0.45, 1.0), _Y),
    )
    return _base_config(
        "walk_with_hands",
        _gait_phases(placements, hands=hands),
        damping_overrides={
            "left_hand": contact_damping_params(hand_kd=1000.0),
            "right_hand": contact_damping_params(hand_kd=1000.0),
        },
    )


def build_handrail_stairs(n_steps: int = 4, rise: float = 0.15,
                          tread: float = 0.25) -> ScenarioConfig:
    """Stair climb holding a handrail; single-support CoM shifts 50 mm inward.

    The right hand grasps the rail (a rung-like segment above the leading
    foot) and regrips one tread ahead at each double support.
    """
    placements = [("left_foot", 0.0, 0.1, 0.0), ("right_foot", 0.0, -0.1, 0.0)]
    limb = "left_foot"
    for i in range(1, n_steps + 1):
        y = 0.1 if limb == "left_foot" else -0.1
        placements.append((limb, i * tread, y, i * rise))
        limb = "right_foot" if limb == "left_foot" else "left_foot"

    # rail runs parallel to the stair slope on the right side
    def rail_grasp(x):
        z = 0.9 + x * (rise / tread)
        g = rung_grasp("right_hand", (x, -0.35, z), half_width=0.05)
        return g

    stance = {p[0]: p[1:] for p in placements[:2]}
    phases = []
    t = 0.8
    lead_x = 0.0

    def feet_contacts():
        return tuple(foot_contact(l, (x, y), z) for l, (x, y, z) in
                     sorted(stance.items()))

    phases.append(ContactPhase(0.0, t, feet_contacts() + (rail_grasp(lead_x),),
                               _targets(feet_contacts())))
    for limb, x, y, z in placements[2:]:
        support = tuple(
            foot_contact(other, (sx, sy), sz)
            for other, (sx, sy, sz) in sorted(stance.items()) if other != limb
        )
        hand = rail_grasp(lead_x)
        phases.append(ContactPhase(t, t + 0.8, support + (hand,),
                                   {**_targets(support), **{
                                       limb: (np.array([x, y, z]), np.zeros(3))}}))
        t += 0.8
        stance[limb] = (x, y, z)
        lead_x = x
        hand = rail_grasp(lead_x)
        phases.append(ContactPhase(t, t + 0.4, feet_contacts() + (hand,),
                                   _targets(feet_contacts())))
        t += 0.4
    phases.append(ContactPhase(t, t + 1.0, feet_contacts() + (rail_grasp(lead_x),),
                               _targets(feet_contacts())))
    return _base_config(
        "handrail_stairs", phases,
        rule=ReferenceRule.CENTER_WITH_LATERAL_OFFSET,
        lateral_offset_m=0.05,
    )


def build_vertical_ladder(rungs_climbed: int = 2) -> ScenarioConfig:
    """Vertical-ladder climb: toe-line feet, bilateral hand grasps.

    Rungs are 200 mm apart at x = 0.3; the CoM reference hangs 0.3 m behind
    the ladder plane.  Limbs move one at a time, hands leading.
    """
    rung_dz = 0.2
    ladder_x = 0.3

    def rung_z(k):
        return k * rung_dz

    def foot(limb, k, side):
        return toe_contact(limb, (ladder_x, 0.1 * side, rung_z(k)))

    def hand(limb, k, side):
        return rung_grasp(limb, (ladder_x, 0.15 * side, rung_z(k)))

    holds = {
        "left_foot": (foot, 1, +1), "right_foot": (foot, 1, -1),
        "left_hand": (hand, 7, +1), "right_hand": (hand, 7, -1),
    }
    rung_of = {limb: k for limb, (_, k, _s) in holds.items()}

    def contact(limb):
        fn, _, side = holds[limb]
        return fn(limb, rung_of[limb], side)

    def all_contacts():
        return tuple(contact(limb) for limb in sorted(holds))

    phases = []
    t = 1.0
    phases.append(ContactPhase(0.0, t, all_contacts(), _targets(all_contacts())))
    order = ("left_hand", "right_hand", "left_foot", "right_foot")
    for _ in range(rungs_climbed):
        for limb in order:
            keep = tuple(contact(l) for l in sorted(holds) if l != limb)
            rung_of[limb] += 1
            phases.append(ContactPhase(t, t + 0.8, keep,
                                       {**_targets(keep),
                                        limb: _pose(contact(limb))}))
            t += 0.8
            phases.append(ContactPhase(t, t + 0.4, all_contacts(),
                                       _targets(all_contacts())))
            t += 0.4
    phases.append(ContactPhase(t, t + 1.0, all_contacts(), _targets(all_contacts())))
    return _base_config(
        "vertical_ladder", phases,
        rule=ReferenceRule.FIXED_OFFSET_FROM_STRUCTURE,
        structure_offset=np.array([ladder_x - 0.3, 0.0, 0.0]),
        com_height_offset=0.8,
        stabilizer_gains=climbing_stabilizer_gains(),
        damping_overrides={
            "left_hand": contact_damping_params(hand_kd=50000.0),
            "right_hand": contact_damping_params(hand_kd=50000.0),
        },
    )


def build_hands_support(duration: float = 6.0) -> ScenarioConfig:
    """Whole body held on palm contacts on 0.5 m supports, legs swinging."""
    hands = (
        pad_contact("left_hand", (0.0, 0.3, 0.5), _Z),
        pad_contact("right_hand", (0.0, -0.3, 0.5), _Z),
    )
    third = duration / 3.0
    swings = [
        (np.array([0.25, 0.1, 0.3]), np.array([0.25, -0.1, 0.3])),
        (np.array([-0.25, 0.1, 0.3]), np.array([-0.25, -0.1, 0.3])),
        (np.array([0.25, 0.1, 0.3]), np.array([0.25, -0.1, 0.3])),
    ]
    phases = [
        ContactPhase(i * third, (i + 1) * third, hands,
                     {**_targets(hands),
                      "left_foot": (lf, np.zeros(3)),
                      "right_foot": (rf, np.zeros(3))})
        for i, (lf, rf) in enumerate(swings)
    ]
    return _base_config("hands_support", phases, com_height_offset=0.3)


def build_moving_environment(duration: float = 6.0) -> ScenarioConfig:
    """Stand on a heaving floor with palms on a swaying front wall."""
    contacts = (
        foot_contact("left_foot", (0.0, 0.15)),
        foot_contact("right_foot", (0.0, -0.15)),
        pad_contact("left_hand", (0.5, 0.25, 1.0), -_X),
        pad_contact("right_hand", (0.5, -0.25, 1.0), -_X),
    )
    phase = ContactPhase(0.0, duration, contacts, _targets(contacts))
    return _base_config(
        "moving_environment", [phase],
        damping_overrides={
            "left_hand": contact_damping_params(hand_kd=1000.0),
            "right_hand": contact_damping_params(hand_kd=1000.0),
        },
        environment_motion=EnvironmentMotion(
            limb_ids=("left_foot", "right_foot", "left_hand", "right_hand"),
        ),
    )


def build_cartwheel() -> ScenarioConfig:
    """Lateral cartwheel for open-loop generation: base rolls one full turn.

    Contact sequence: stand, left palm down, both palms (feet airborne),
    right foot lands past the hands, stand.  Roll keyframes ramp 0 -> 2 pi
    across the contact transitions.
    """
    lf0, rf0 = foot_contact("left_foot", (0.0, 0.1)), foot_contact("right_foot", (0.0, -0.1))
    lh = pad_contact("left_hand", (0.0, 0.45, 0.0), _Z)
    rh = pad_contact("right_hand", (0.0, 0.75, 0.0), _Z)
    rf1 = foot_contact("right_foot", (0.0, 1.1))
    lf1 = foot_contact("left_foot", (0.0, 1.3))
    two_pi = 2.0 * math.pi
    phases = [
        ContactPhase(0.0, 1.0, (lf0, rf0), _targets((lf0, rf0))),
        ContactPhase(1.0, 1.8, (lf0, rf0, lh), _targets((lf0, rf0, lh))),
        ContactPhase(1.8, 3.0, (lh, rh), _targets((lh, rh))),
        ContactPhase(3.0, 3.8, (lh, rh, rf1), _targets((lh, rh, rf1))),
        ContactPhase(3.8, 5.0, (lf1, rf1), _targets((lf1, rf1))),
    ]
    return _base_config(
        "cartwheel", phases,
        euler_keyframes=(
            (0.0, (0.0, 0.0, 0.0)),
            (1.0, (0.0, 0.0, 0.0)),
            (3.8, (two_pi, 0.0, 0.0)),
            (5.0, (two_pi, 0.0, 0.0)),
        ),
    )


SCENARIO_BUILDERS = {
    "stand": build_stand,
    "walk_flat": build_walk_flat,
    "walk_with_hands": build_walk_with_hands,
    "handrail_stairs": build_handrail_stairs,
    "vertical_ladder": build_vertical_ladder,
    "hands_support": build_hands_support,
    "moving_environment": build_moving_environment,
    "cartwheel": build_cartwheel,
}


def build_scenario(name: str, **kwargs) -> ScenarioConfig:
    """Construct a bundled scenario by name."""
    try:
        builder = SCENARIO_BUILDERS[name]
    except KeyError:
        raise KeyError(
            f"unknown scenario {name!r}; available: {sorted(SCENARIO_BUILDERS)}"
        ) from None
    return builder(**kwargs)
