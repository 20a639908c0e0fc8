"""CLI tests, run in-process through main() so exit codes, files, and console
output are checked without spawning an interpreter per case.  One subprocess
smoke test covers the module entry point end to end.
"""

import csv
import json
import subprocess
import sys

import pytest

from centroidal_control import builtin_scenario_names, save_scenario
from centroidal_control.catalog import build_stand
from centroidal_control.cli import main
from centroidal_control.wrench import IterationLimit


@pytest.fixture(scope="module")
def stand_yaml(tmp_path_factory):
    path = tmp_path_factory.mktemp("scn") / "short_stand.yaml"
    save_scenario(build_stand(duration=1.0), path)
    return str(path)


def test_list_prints_bundled_names(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out == builtin_scenario_names()


def test_run_writes_trace_and_summary(stand_yaml, tmp_path, capsys):
    out_dir = tmp_path / "out"
    rc = main(["run", "--scenario", stand_yaml, "--out-dir", str(out_dir)])
    assert rc == 0
    csv_path = out_dir / "stand_trace.csv"
    json_path = out_dir / "stand_summary.json"
    assert csv_path.is_file() and json_path.is_file()
    summary = json.loads(json_path.read_text())
    assert summary["scenario"] == "stand"
    assert summary["fault_count"] == 0
    assert summary["open_loop"] is False
    assert summary["steps"] == 500
    with open(csv_path) as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 500
    assert float(rows[-1]["act_z"]) == pytest.approx(0.83, abs=1e-3)
    stdout = capsys.readouterr().out
    assert "trace:" in stdout and "summary:" in stdout


def test_run_open_loop(stand_yaml, tmp_path, capsys):
    rc = main(["run", "--scenario", stand_yaml, "--out-dir", str(tmp_path),
               "--open-loop"])
    assert rc == 0
    summary = json.loads((tmp_path / "stand_summary.json").read_text())
    assert summary["open_loop"] is True
    # generation mode: the plant is declared to follow the plan exactly
    assert summary["rmse_com_desired_vs_actual_m"] == 0.0


def test_run_duration_override(stand_yaml, tmp_path):
    rc = main(["run", "--scenario", stand_yaml, "--out-dir", str(tmp_path),
               "--duration", "1.5"])
    assert rc == 0
    summary = json.loads((tmp_path / "stand_summary.json").read_text())
    assert summary["steps"] == 750


def test_run_unknown_scenario():
    with pytest.raises(FileNotFoundError):
        main(["run", "--scenario", "flying"])


def test_run_fault_budget_exit_code(stand_yaml, tmp_path, capsys, monkeypatch):
    import centroidal_control.scenario as sc

    def limited(*args, **kwargs):
        raise IterationLimit(iterations=1, n_columns=1, kkt=1.0)

    monkeypatch.setattr(sc, "distribute_desired_wrench", limited)
    rc = main(["run", "--scenario", stand_yaml, "--out-dir", str(tmp_path)])
    assert rc == 1
    assert "exceed the budget" in capsys.readouterr().err


def test_bench_single_component(stand_yaml, capsys):
    rc = main(["bench", "--scenario", stand_yaml, "--component", "preview",
               "--iterations", "50"])
    assert rc == 0
    out = capsys.readouterr().out
    assert "component" in out and "preview" in out and "(us)" in out


def test_gains_report(stand_yaml, capsys):
    rc = main(["gains", "--scenario", stand_yaml])
    assert rc == 0
    out = capsys.readouterr().out
    for tag in ("x", "yaw", "rho = 0.9", "DCM-equivalent", "Kp = diag("):
        assert tag in out


def test_module_entry_point_smoke():
    proc = subprocess.run(
        [sys.executable, "-m", "centroidal_control.cli", "list"],
        capture_output=True, text=True, timeout=60,
    )
    assert proc.returncode == 0
    assert "stand" in proc.stdout.splitlines()
