"""Harness tests: reference programs, the two-rate loop, traces, files, bench.

Closed-loop checks run on short catalog scenarios (or custom configs with a
trimmed preview horizon) so the whole file stays fast.  Solver-fault paths are
exercised by monkeypatching the projection/distribution entry points to raise,
which is the only way to trigger them deterministically.
"""

import csv
import dataclasses
import math

import numpy as np
import pytest

from centroidal_control import (
    ContactMode,
    ContactPhase,
    ContactSpec,
    DisturbanceEvent,
    EnvironmentMotion,
    PreviewWeights,
    ReferenceRule,
    RobotParams,
    ScenarioConfig,
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
from centroidal_control.catalog import (
    build_cartwheel,
    build_stand,
    build_vertical_ladder,
    build_walk_flat,
    foot_contact,
)
from centroidal_control.scenario import (
    _moved_contact,
    scenario_from_dict,
    scenario_to_dict,
)
from centroidal_control.stabilizer import default_stabilizer_gains
from centroidal_control.wrench import IterationLimit

DT_PLAN = 0.005


def _weights(horizon=40, q=(2e2, 5e-4)):
    return PreviewWeights(Q=q, R=1e-8, horizon_steps=horizon, dt=DT_PLAN)


def _custom(phases, *, rule=ReferenceRule.CENTER_OF_CONTACTS, horizon=40, **kw):
    """Small hand-rolled config; trimmed horizon keeps gain synthesis cheap."""
    fields = dict(
        name="test",
        robot=RobotParams(mass=105.0),
        phases=tuple(phases),
        reference_rule=rule,
        com_height_offset=0.83,
        preview_linear=_weights(horizon),
        preview_angular=_weights(horizon, q=(1e2, 5e-3)),
        stabilizer_gains=default_stabilizer_gains(),
    )
    fields.update(kw)
    return ScenarioConfig(**fields)


def _both_feet():
    return (foot_contact("left_foot", (0.0, 0.15)),
            foot_contact("right_foot", (0.0, -0.15)))


@pytest.fixture(scope="module")
def stand_run():
    cfg = build_stand(duration=1.0)
    return cfg, run_closed_loop(cfg)


# ---------------------------------------------------------------------------
# config validation


def test_config_validation():
    feet = _both_feet()
    ok = [ContactPhase(0.0, 1.0, feet)]
    with pytest.raises(ValueError, match="phase"):
        _custom([])
    with pytest.raises(ValueError, match="start"):
        _custom([ContactPhase(0.1, 1.0, feet)])
    with pytest.raises(ValueError, match="contiguous"):
        _custom([ContactPhase(0.0, 1.0, feet), ContactPhase(1.5, 2.0, feet)])
    with pytest.raises(ValueError, match="duration_s"):
        _custom(ok, duration_s=0.5)
    with pytest.raises(ValueError, match="control_dt"):
        _custom(ok, control_dt=0.0)
    # preview period must not be finer than the control period
    with pytest.raises(ValueError, match="control_dt"):
        _custom(ok, control_dt=0.01)
    with pytest.raises(ValueError):
        _custom(ok, preview_angular=PreviewWeights(
            Q=(1e2, 5e-3), R=1e-8, horizon_steps=40, dt=0.01))
    with pytest.raises(ValueError):
        _custom(ok, preview_angular=PreviewWeights(
            Q=(1e2, 5e-3), R=1e-8, horizon_steps=80, dt=DT_PLAN))
    with pytest.raises(ValueError, match="fault_budget"):
        _custom(ok, fault_budget=-1)


def test_contact_phase_validation():
    feet = _both_feet()
    with pytest.raises(ValueError):
        ContactPhase(1.0, 1.0, feet)
    with pytest.raises(ValueError):
        ContactPhase(0.0, math.inf, feet)
    assert ContactPhase(0.25, 1.0, feet).duration == pytest.approx(0.75)


def test_disturbance_event_vector():
    ev = DisturbanceEvent(0.5, [0, 20, 0, 0, 0, 0])
    assert ev.impulse.shape == (6,)
    assert not ev.impulse.flags.writeable
    with pytest.raises(ValueError):
        DisturbanceEvent(0.5, [1.0, 2.0])


def test_environment_motion_validation():
    with pytest.raises(ValueError):
        EnvironmentMotion(("left_foot",), period_s=0.0)


# ---------------------------------------------------------------------------
# reference program


def test_stand_reference_window():
    cfg = build_stand(duration=5.0)
    win = generate_reference_window(cfg, 0.0)
    assert win.shape == (6, 400, 2)
    # feet straddle the origin: reference sits over their midpoint at 0.83 m
    assert np.all(win[0, :, 0] == 0.0)
    assert np.allclose(win[1, :, 0], 0.0, atol=1e-12)
    assert np.allclose(win[2, :, 0], 0.83)
    assert np.all(win[3:, :, 0] == 0.0)     # level orientation
    assert np.all(win[:, :, 1] == 0.0)      # force reference is always zero


def test_reference_prefers_feet_over_hands():
    # a hand pad far off to the side must not drag the reference sideways
    hand = ContactSpec(
        limb_id="left_hand",
        vertices=np.array([[0.5, 0.9, 1.0], [0.5, 1.1, 1.0],
                           [0.6, 1.1, 1.0], [0.6, 0.9, 1.0]]),
        contact_normal=(0.0, 0.0, 1.0),
        tangent_basis=((1.0, 0.0, 0.0), (0.0, 1.0, 0.0)),
        friction_coeff=0.5,
    )
    cfg = _custom([ContactPhase(0.0, 1.0, _both_feet() + (hand,))])
    win = generate_reference_window(cfg, 0.0)
    assert np.all(win[0, :, 0] == 0.0)
    assert np.allclose(win[1, :, 0], 0.0, atol=1e-12)
    assert np.allclose(win[2, :, 0], 0.83)


def test_lateral_offset_rule_shifts_single_support_inward():
    left, right = _both_feet()
    phases = [ContactPhase(0.0, 1.0, (left, right)),
              ContactPhase(1.0, 2.0, (left,))]
    cfg = _custom(phases, rule=ReferenceRule.CENTER_WITH_LATERAL_OFFSET,
                  lateral_offset_m=0.02)
    # scenario centerline = mean foot-centroid y over the timeline
    # = mean(+0.15, -0.15, +0.15) = 0.05; the left foot sits above it, so the
    # single-support reference shifts 20 mm back toward the centerline.
    win = generate_reference_window(cfg, 1.5)
    assert np.allclose(win[0, :, 0], 0.0)
    assert np.allclose(win[1, :, 0], 0.13)
    # double support is untouched by the rule
    win0 = generate_reference_window(cfg, 0.0)
    assert abs(win0[1, 0, 0]) < 1e-12


def test_fixed_structure_offset_rule():
    cfg = _custom([ContactPhase(0.0, 1.0, _both_feet())],
                  rule=ReferenceRule.FIXED_OFFSET_FROM_STRUCTURE,
                  structure_offset=np.array([0.3, 0.1, -0.05]))
    win = generate_reference_window(cfg, 0.0)
    assert np.allclose(win[0, :, 0], 0.3)
    assert np.allclose(win[1, :, 0], 0.1)
    assert np.allclose(win[2, :, 0], 0.83 - 0.05)


def test_window_straddles_phase_switch():
    left, right = _both_feet()
    ahead = (foot_contact("left_foot", (0.3, 0.15)),
             foot_contact("right_foot", (0.3, -0.15)))
    cfg = _custom([ContactPhase(0.0, 0.5, (left, right)),
                   ContactPhase(0.5, 1.0, ahead)])
    win = generate_reference_window(cfg, 0.25)
    # sample i previews t + (i+1) dt, so the step at t=0.5 lands at i=49
    x = win[0, :, 0]
    assert np.all(x[:49] == 0.0)
    assert np.allclose(x[49:], 0.3)


def test_euler_keyframe_interpolation():
    cfg = _custom([ContactPhase(0.0, 2.0, _both_feet())],
                  euler_keyframes=((0.0, (0.0, 0.0, 0.0)),
                                   (1.0, (math.pi / 2, 0.0, 0.0))),
                  duration_s=2.0)
    win = generate_reference_window(cfg, 0.0)
    i = np.arange(win.shape[1])
    expect = np.minimum((i + 1) * DT_PLAN, 1.0) * (math.pi / 2)
    assert np.allclose(win[3, :, 0], expect, atol=1e-12)
    assert np.all(win[4:, :, 0] == 0.0)


def test_reference_requires_contacts():
    cfg = _custom([ContactPhase(0.0, 1.0, _both_feet()),
                   ContactPhase(1.0, 1.5, ())])
    with pytest.raises(ValueError, match="no contacts"):
        generate_reference_window(cfg, 0.0)


# ---------------------------------------------------------------------------
# closed loop on the stand scenario


def test_plan_and_phase_indices_follow_the_grids(stand_run):
    cfg, trace = stand_run
    assert len(trace) == round(cfg.duration_s / cfg.control_dt)
    for row in trace:
        # planner has consumed every tick with index*dt <= t
        assert row.plan_index == int(row.time / DT_PLAN + 1e-9) + 1
        assert row.phase_index == 0
        assert not row.fault


def test_stand_holds_the_reference():
    trace = run_closed_loop(build_stand(duration=5.0))
    err = np.array([r.actual.com_pos - r.ref_pos for r in trace])
    # regulation about a fixed point: drift should be down in the noise,
    # far inside the 1 mm budget a usable stand needs
    assert np.abs(err).max() < 1e-6
    eul = np.array([r.actual.euler for r in trace])
    assert np.abs(eul).max() < 1e-8


def test_closed_loop_is_deterministic(tmp_path):
    cfg = build_stand(duration=0.5)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_csv(run_closed_loop(cfg), a)
    emit_csv(run_closed_loop(cfg), b)
    assert a.read_bytes() == b.read_bytes()


def test_stand_wrench_accounting(stand_run):
    cfg, trace = stand_run
    g = cfg.robot.gravity
    weight = np.array([0.0, 0.0, cfg.robot.mass * g])
    for row in trace[::25]:
        # distributed limb wrenches must reassemble the post-feedback demand,
        # unfolded at the CoM the distribution saw (moments about the origin)
        f_d = row.w_desired[:3] + weight
        m_d = row.w_desired[3:] + np.cross(row.actual.com_pos, f_d)
        total = sum(row.limb_desired.values())
        assert np.allclose(total[:3], f_d, atol=1e-6)
        assert np.allclose(total[3:], m_d, atol=1e-6)
        # plant resultant is first-order lagged, already gravity-folded
        meas = sum(row.limb_measured.values())
        assert np.allclose(row.w_actual[:3], meas[:3] - weight, atol=1e-9)
    fz = np.array([sum(r.limb_desired.values())[2] for r in trace])
    assert np.allclose(fz, cfg.robot.mass * g, atol=1e-3)


def test_open_loop_matches_closed_loop_plans():
    cfg = build_walk_flat(n_steps=2)
    open_rows = run_open_loop_generation(cfg)
    closed_rows = run_closed_loop(cfg)
    first_at = {}
    for row in closed_rows:
        first_at.setdefault(row.plan_index, row)
    matched = 0
    for row in open_rows:
        twin = first_at.get(row.plan_index)
        if twin is None:
            continue
        # same planner state sequence, bit for bit: the preview stage never
        # sees the feedback loop
        assert np.array_equal(row.planned.com_pos, twin.planned.com_pos)
        assert np.array_equal(row.planned.euler, twin.planned.euler)
        assert np.array_equal(row.w_projected, twin.w_projected)
        matched += 1
    assert matched >= len(open_rows) - 1
    # open-loop rows tick once per planner period
    idx = [r.plan_index for r in open_rows]
    assert idx == list(range(1, len(open_rows) + 1))


# ---------------------------------------------------------------------------
# trace files


def test_csv_round_trip(stand_run, tmp_path):
    cfg, trace = stand_run
    path = tmp_path / "trace.csv"
    emit_csv(trace, path)
    with open(path) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == len(trace)
    header = list(rows[0].keys())
    assert header[:4] == ["t", "phase", "plan_index", "fault"]
    for col in ("ref_x", "plan_z", "des_vy", "act_yaw", "wplan_fz",
                "wproj_nx", "wdes_fy", "wact_nz", "zmp_plan_x",
                "zmp_margin_plan", "proj_iters", "dist_kkt",
                "left_foot_des_fz", "right_foot_meas_nz"):
        assert col in header
    assert len(header) == len(set(header))
    k = len(trace) // 2
    got = rows[k]
    assert float(got["t"]) == pytest.approx(trace[k].time, abs=1e-9)
    assert int(got["plan_index"]) == trace[k].plan_index
    assert float(got["act_z"]) == pytest.approx(
        trace[k].actual.com_pos[2], rel=1e-6)
    assert float(got["left_foot_des_fz"]) == pytest.approx(
        trace[k].limb_desired["left_foot"][2], rel=1e-6, abs=1e-6)
    with pytest.raises(ValueError, match="empty"):
        emit_csv([], tmp_path / "empty.csv")


def test_summary_contents(stand_run):
    cfg, trace = stand_run
    s = emit_summary(trace)
    for key in ("steps", "duration_s", "fault_count",
                "mean_projection_error_force_N", "max_projection_error_force_N",
                "mean_projection_error_moment_Nm",
                "max_projection_error_moment_Nm", "min_zmp_margin_planned_m",
                "rmse_com_desired_vs_actual_m", "rmse_com_reference_vs_actual_m",
                "max_com_reference_error_m", "final_com_m",
                "peak_limb_normal_force_N"):
        assert key in s, key
    assert s["steps"] == len(trace)
    assert s["fault_count"] == 0
    assert s["duration_s"] == pytest.approx(cfg.duration_s)
    assert s["mean_projection_error_force_N"] < 1e-6
    assert s["min_zmp_margin_planned_m"] > 0.0
    assert set(s["peak_limb_normal_force_N"]) == {"left_foot", "right_foot"}
    # both feet carry on the order of half the weight
    for peak in s["peak_limb_normal_force_N"].values():
        assert 300.0 < peak < 800.0
    with pytest.raises(ValueError):
        emit_summary([])


# ---------------------------------------------------------------------------
# serialization


def test_yaml_round_trip(tmp_path):
    for cfg in (build_stand(), build_vertical_ladder(), build_cartwheel()):
        path = tmp_path / f"{cfg.name}.yaml"
        save_scenario(cfg, path)
        back = load_scenario(path)
        assert scenario_to_dict(back) == scenario_to_dict(cfg)


def test_dict_round_trip_preserves_types():
    cfg = build_vertical_ladder()
    back = scenario_from_dict(scenario_to_dict(cfg))
    assert back.reference_rule is cfg.reference_rule
    assert back.phases[0].active_contacts[0].mode is ContactMode.UNILATERAL
    assert any(c.mode is ContactMode.GRASP
               for ph in back.phases for c in ph.active_contacts)
    assert back.preview_linear.horizon_steps == cfg.preview_linear.horizon_steps


def test_bundled_scenarios_load():
    names = builtin_scenario_names()
    assert names == sorted(names)
    assert set(names) == {
        "stand", "walk_flat", "walk_with_hands", "handrail_stairs",
        "vertical_ladder", "hands_support", "moving_environment", "cartwheel",
    }
    cfg = load_scenario("stand")
    assert cfg.name == "stand"
    assert cfg.robot.mass == pytest.approx(105.0)
    with pytest.raises(FileNotFoundError, match="no bundled scenario"):
        load_scenario("flying")


# ---------------------------------------------------------------------------
# environment motion


def test_moved_contact_formula():
    base = foot_contact("left_foot", (0.0, 0.15))
    em = EnvironmentMotion(("left_foot",), translation_amplitude_m=0.02,
                           tilt_amplitude_rad=0.0, period_s=2.0)
    t = 0.25
    s = math.sin(2.0 * math.pi * t / 2.0)
    moved = _moved_contact(base, em, t)
    assert np.allclose(moved.vertices,
                       base.vertices + 0.02 * s * base.contact_normal,
                       atol=1e-12)
    assert np.array_equal(moved.contact_normal, base.contact_normal)

    em_tilt = EnvironmentMotion(("left_foot",), translation_amplitude_m=0.0,
                                tilt_amplitude_rad=0.1, period_s=2.0)
    tilted = _moved_contact(base, em_tilt, t)
    # rigid tilt about the vertex centroid: pairwise distances survive
    d0 = np.linalg.norm(base.vertices[0] - base.vertices[2])
    d1 = np.linalg.norm(tilted.vertices[0] - tilted.vertices[2])
    assert d1 == pytest.approx(d0, rel=1e-12)
    assert np.allclose(tilted.vertices.mean(axis=0),
                       base.vertices.mean(axis=0), atol=1e-12)
    ang = math.acos(np.clip(tilted.contact_normal @ base.contact_normal,
                            -1.0, 1.0))
    assert ang == pytest.approx(abs(0.1 * s), abs=1e-9)


def test_environment_motion_run_stays_clean():
    cfg = _custom([ContactPhase(0.0, 1.2, _both_feet())],
                  environment_motion=EnvironmentMotion(
                      ("left_foot", "right_foot"),
                      translation_amplitude_m=0.005,
                      tilt_amplitude_rad=math.radians(1.0),
                      period_s=0.6))
    trace = run_closed_loop(cfg)
    assert not any(r.fault for r in trace)
    err = np.array([r.actual.com_pos - r.ref_pos for r in trace])
    assert np.abs(err).max() < 0.05


# ---------------------------------------------------------------------------
# disturbances and solver faults


def test_disturbance_changes_trajectory_after_event():
    base = build_stand(duration=2.0)
    cfg = dataclasses.replace(
        base, disturbances=(DisturbanceEvent(0.5, (0.0, 30.0, 0.0,
                                                   0.0, 0.0, 0.0)),))
    quiet = run_closed_loop(base)
    hit = run_closed_loop(cfg)
    t = np.array([r.time for r in quiet])
    dy = np.array([abs(h.actual.com_pos[1] - q.actual.com_pos[1])
                   for h, q in zip(hit, quiet)])
    assert np.all(dy[t <= 0.5] == 0.0)
    # 30 N*s on 105 kg: ~0.29 m/s kick, clearly visible then damped out
    assert dy[t > 0.5].max() > 1e-3
    assert dy[-1] < dy[t > 0.5].max() / 2.0


def _always_limited(*args, **kwargs):
    raise IterationLimit(iterations=1, n_columns=1, kkt=1.0)


def test_distribution_fault_holds_previous_wrenches(monkeypatch):
    import centroidal_control.scenario as sc
    monkeypatch.setattr(sc, "distribute_desired_wrench", _always_limited)
    trace = run_closed_loop(build_stand(duration=0.2))
    assert all(r.fault for r in trace)
    first = trace[0].limb_desired
    for row in trace:
        for limb, w in row.limb_desired.items():
            assert np.array_equal(w, first[limb])
    assert emit_summary(trace)["fault_count"] == len(trace)


def test_projection_fault_holds_projected_wrench(monkeypatch):
    import centroidal_control.scenario as sc
    monkeypatch.setattr(sc, "project_planned_wrench", _always_limited)
    trace = run_closed_loop(build_stand(duration=0.2))
    # only steps where the (slower) planner actually ticked can fault
    prev = -1
    n_fault = 0
    for row in trace:
        ticked = row.plan_index != prev
        assert row.fault == ticked
        n_fault += row.fault
        prev = row.plan_index
    assert n_fault == trace[-1].plan_index
    w0 = trace[0].w_projected
    assert all(np.array_equal(r.w_projected, w0) for r in trace)


# ---------------------------------------------------------------------------
# benchmarks


def test_bench_smoke():
    cfg = build_stand(duration=1.0)
    for component in ("preview", "projection", "distribution", "total_step"):
        out = bench(cfg, component, iterations=20, warmup=2)
        assert out["component"] == component
        assert out["iterations"] == 20
        for key in ("mean_us", "p50_us", "p90_us", "p99_us", "max_us"):
            assert out[key] > 0.0
        assert out["p50_us"] <= out["p99_us"] <= out["max_us"]


def test_bench_rejects_unknown_component():
    with pytest.raises(ValueError, match="component"):
        bench(build_stand(duration=1.0), "walking_speed")
