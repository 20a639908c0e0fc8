"""Command-line front end: run scenarios, benchmark components, print gains."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from .scenario import (
    bench,
    builtin_scenario_names,
    emit_csv,
    emit_summary,
    load_scenario,
    run_closed_loop,
    run_open_loop_generation,
)
from .stabilizer import dcm_equivalent_gains
from .preview import synthesize_gains
from .scenario import _axis_systems  # gain report reuses the harness models

__all__ = ["main"]


def _load(args):
    cfg = load_scenario(args.scenario)
    if args.duration is not None:
        cfg = replace(cfg, duration_s=args.duration)
    return cfg


def _cmd_run(args) -> int:
    cfg = _load(args)
    trace = (run_open_loop_generation if args.open_loop else run_closed_loop)(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    csv_path = os.path.join(args.out_dir, f"{cfg.name}_trace.csv")
    summary_path = os.path.join(args.out_dir, f"{cfg.name}_summary.json")
    emit_csv(trace, csv_path)
    summary = emit_summary(trace)
    summary["scenario"] = cfg.name
    summary["open_loop"] = bool(args.open_loop)
    summary["seed"] = args.seed
    with open(summary_path, "w") as f:
        json.dump(summary, f, indent=2)
    print(json.dumps(summary, indent=2))
    print(f"trace: {csv_path}")
    print(f"summary: {summary_path}")
    if summary["fault_count"] > cfg.fault_budget:
        print(
            f"error: {summary['fault_count']} solver faults exceed the budget "
            f"of {cfg.fault_budget}",
            file=sys.stderr,
        )
        return 1
    return 0


def _cmd_bench(args) -> int:
    cfg = _load(args)
    components = (
        ["preview", "projection", "distribution", "total_step"]
        if args.component == "all" else [args.component]
    )
    print(f"scenario: {cfg.name}  iterations: {args.iterations}")
    print(f"{'component':>14} {'mean':>9} {'p50':>9} {'p90':>9} {'p99':>9} {'max':>9}  (us)")
    for comp in components:
        r = bench(cfg, comp, iterations=args.iterations)
        print(
            f"{comp:>14} {r['mean_us']:>9.1f} {r['p50_us']:>9.1f} "
            f"{r['p90_us']:>9.1f} {r['p99_us']:>9.1f} {r['max_us']:>9.1f}"
        )
    return 0


def _cmd_gains(args) -> int:
    cfg = _load(args)
    systems = _axis_systems(cfg)
    names = ("x", "y", "z", "roll", "pitch", "yaw")
    print(f"scenario: {cfg.name}  preview horizon: "
          f"{cfg.preview_linear.horizon_steps} x {cfg.preview_linear.dt * 1e3:.1f} ms")
    for i, name in enumerate(names):
        weights = cfg.preview_linear if i < 3 else cfg.preview_angular
        g = synthesize_gains(systems[i], weights)
        print(
            f"  {name:>5}: k_fb = [{g.k_fb[0, 0]:.6g}, {g.k_fb[0, 1]:.6g}, "
            f"{g.k_fb[0, 2]:.6g}]  rho = {g.closed_loop_spectral_radius:.6f}  "
            f"k_ff_tail = [{g.k_ff_tail[0]:.6g}, {g.k_ff_tail[1]:.6g}]"
        )
    omega = math.sqrt(cfg.robot.gravity / cfg.com_height_offset)
    kp, kd = dcm_equivalent_gains(cfg.robot.mass, omega, np.diag([2.0, 2.0]))
    print(f"  LIPM omega = {omega:.4f} 1/s (CoM height {cfg.com_height_offset} m)")
    print(f"  DCM-equivalent horizontal gains for K_xi = diag(2, 2): "
          f"Kp = diag({kp[0, 0]:.1f}), Kd = diag({kd[0, 0]:.1f})")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="centroidal-sim",
        description="Reduced-model centroidal control scenarios: run, bench, gains.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate a scenario, write CSV trace + summary")
    run_p.add_argument("--scenario", required=True,
                       help="bundled scenario name or path to a YAML file")
    run_p.add_argument("--out-dir", default=".", help="output directory")
    run_p.add_argument("--duration", type=float, default=None,
                       help="override scenario duration (seconds, extend only)")
    run_p.add_argument("--open-loop", action="store_true",
                       help="trajectory generation only (no feedback loop)")
    run_p.add_argument("--seed", type=int, default=0,
                       help="recorded in the summary; runs are deterministic")
    run_p.set_defaults(func=_cmd_run)

    bench_p = sub.add_parser("bench", help="time pipeline components")
    bench_p.add_argument("--scenario", default="vertical_ladder")
    bench_p.add_argument("--component", default="all",
                         choices=["all", "preview", "projection",
                                  "distribution", "total_step"])
    bench_p.add_argument("--iterations", type=int, default=10_000)
    bench_p.add_argument("--duration", type=float, default=None)
    bench_p.set_defaults(func=_cmd_bench)

    gains_p = sub.add_parser("gains", help="print synthesized controller gains")
    gains_p.add_argument("--scenario", default="stand")
    gains_p.add_argument("--duration", type=float, default=None)
    gains_p.set_defaults(func=_cmd_gains)

    list_p = sub.add_parser("list", help="list bundled scenarios")
    list_p.set_defaults(func=lambda a: (print("\n".join(builtin_scenario_names())), 0)[1])

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
