"""Centroidal preview control with friction-cone wrench distribution.

Trajectory generation (preview servo on per-axis triple integrators), wrench
projection/distribution by nonnegative least squares against grasp-matrix
cones, centroidal PD stabilization with limb damping control, and a
reduced-model scenario harness with CSV traces and benchmarks.
"""
from .catalog import SCENARIO_BUILDERS, build_scenario
from .contacts import (
    DEFAULT_MARGIN,
    ContactMode,
    ContactSpec,
    EmptyContactSet,
    GraspMatrix,
    NoSupportingContact,
    assemble_grasp_matrix,
    convex_hull_2d,
    polygon_margin,
    ridge_vectors,
    shrink_polygon,
    support_polygon,
)
from .core import (
    FORCE_EPSILON,
    Axis,
    AxisSystem,
    CentroidalState,
    DegenerateContact,
    ResultantWrench,
    RobotParams,
    WrenchFrame,
    discretize_axis,
    fold_gravity,
    integrate_centroidal,
    unfold_gravity,
    zmp_from_wrench,
)
from .preview import (
    PreviewGains,
    PreviewWeights,
    RiccatiDivergence,
    optimal_input,
    plan_axes,
    plan_step,
    synthesize_gains,
)
from .scenario import (
    ContactPhase,
    DisturbanceEvent,
    EnvironmentMotion,
    ReferenceRule,
    ScenarioConfig,
    TraceRow,
    bench,
    builtin_scenario_names,
    emit_csv,
    emit_summary,
    generate_reference_window,
    load_scenario,
    run_closed_loop,
    run_open_loop_generation,
    save_scenario,
)
from .stabilizer import (
    ComplianceState,
    DampingParams,
    DampingPhase,
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
from .wrench import (
    IterationLimit,
    LimbWrench,
    NnlsProblem,
    NnlsSolution,
    distribute_desired_wrench,
    project_planned_wrench,
    solve_nnls,
)

__version__ = "0.1.0"
