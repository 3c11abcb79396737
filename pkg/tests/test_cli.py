from __future__ import annotations

import shutil
import subprocess
import textwrap
from pathlib import Path

import numpy as np
import pytest

from pengeo.cli import OUTPUT_ROOT_ENV, ConfigError, main, parse_config


def _write_config(tmp_path: Path, body: str, name: str = "run.ini") -> Path:
    path = tmp_path / name
    path.write_text(textwrap.dedent(body))
    return path


def _data_rows(csv_path: Path) -> list:
    lines = [
        line
        for line in csv_path.read_text().splitlines()
        if line.strip() and not line.startswith("#")
    ]
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


def _non_comment_text(path: Path) -> str:
    return "\n".join(
        line for line in path.read_text().splitlines() if not line.startswith("#")
    )


def test_list_problems_prints_catalogue(capsys):
    assert main(["list-problems"]) == 0
    out = capsys.readouterr().out
    for name in (
        "euclidean-n",
        "heisenberg",
        "martinet",
        "drift-constant-1d",
        "drift-linear-2d",
        "heisenberg-drift",
    ):
        assert name in out
    assert "2 sqrt(pi z)" in out
    assert out.count("reference") >= 5


def test_solve_heisenberg_writes_full_results(tmp_path, capsys):
    config = _write_config(
        tmp_path,
        """
        [problem]
        name = heisenberg
        """,
    )
    out_dir = tmp_path / "run"
    assert main(["solve", "--config", str(config), "--out", str(out_dir)]) == 0
    captured = capsys.readouterr().out
    assert "verdicts: pass" in captured

    rows = _data_rows(out_dir / "results.csv")
    assert len(rows) == 5
    assert [float(r["q"]) for r in rows] == [1.0, 10.0, 100.0, 1000.0, 10000.0]
    for row in rows:
        assert abs(float(row["length"]) - 1.0) <= 1e-4
        assert float(row["defect"]) <= 1e-8
        assert row["converged"] == "true"
    assert rows[0]["rho0"] == "nan" and rows[0]["rho1"] == "nan"
    assert float(rows[1]["rho1"]) <= 1e-6

    for q_label in ("1", "10", "100", "1000", "10000"):
        assert (out_dir / f"path_q{q_label}.csv").is_file()
    assert (out_dir / "config.ini").read_text() == config.read_text()
    report = (out_dir / "report.txt").read_text()
    assert "nondecreasing" in report


def test_solve_is_deterministic(tmp_path):
    config = _write_config(
        tmp_path,
        """
        [problem]
        name = euclidean-3
        grid_size = 30
        """,
    )
    first = tmp_path / "a"
    second = tmp_path / "b"
    assert main(["solve", "--config", str(config), "--out", str(first)]) == 0
    assert main(["solve", "--config", str(config), "--out", str(second)]) == 0
    assert _non_comment_text(first / "results.csv") == _non_comment_text(
        second / "results.csv"
    )
    assert (first / "path_q100.csv").read_text() == (second / "path_q100.csv").read_text()


def test_solve_single_step_euclidean_energy(tmp_path):
    config = _write_config(
        tmp_path,
        """
        [problem]
        name = euclidean-3
        grid_size = 20

        [schedule]
        q_start = 1
        ratio = 10
        step_count = 1
        """,
    )
    out_dir = tmp_path / "run"
    assert main(["solve", "--config", str(config), "--out", str(out_dir)]) == 0
    rows = _data_rows(out_dir / "results.csv")
    assert len(rows) == 1
    assert float(rows[0]["energy"]) == pytest.approx(1.5, rel=1e-10)


def test_solve_inline_structure_matches_preset(tmp_path):
    config = _write_config(
        tmp_path,
        """
        [problem]
        name = inline-contact
        start = 0, 0, 0
        end = 1, 0, 0
        grid_size = 40

        [structure]
        dimension = 3
        rank = 2
        metric = euclidean
        frame = (1, 0, -x2/2); (0, 1, x1/2)

        [schedule]
        step_count = 1
        """,
    )
    out_dir = tmp_path / "inline"
    assert main(["solve", "--config", str(config), "--out", str(out_dir)]) == 0
    rows = _data_rows(out_dir / "results.csv")
    assert float(rows[0]["energy"]) == pytest.approx(0.5, abs=1e-8)


def test_output_root_from_environment(tmp_path, monkeypatch):
    config = _write_config(
        tmp_path,
        """
        [problem]
        name = euclidean-2
        grid_size = 10

        [schedule]
        step_count = 1
        """,
    )
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "envroot"))
    assert main(["solve", "--config", str(config)]) == 0
    assert (tmp_path / "envroot" / "euclidean-2" / "results.csv").is_file()


def test_output_root_from_config_section(tmp_path):
    config = _write_config(
        tmp_path,
        f"""
        [problem]
        name = euclidean-2
        grid_size = 10

        [schedule]
        step_count = 1

        [output]
        root = {tmp_path / "cfgroot"}
        """,
    )
    assert main(["solve", "--config", str(config)]) == 0
    assert (tmp_path / "cfgroot" / "euclidean-2" / "results.csv").is_file()


def test_malformed_configs_exit_2(tmp_path, capsys):
    cases = {
        "bad_start.ini": (
            """
            [problem]
            name = heisenberg
            start = 0, banana, 0
            """,
            "start",
        ),
        "unknown_key.ini": (
            """
            [problem]
            name = heisenberg
            colour = red
            """,
            "colour",
        ),
        "unknown_section.ini": (
            """
            [problem]
            name = heisenberg

            [paint]
            shade = blue
            """,
            "paint",
        ),
        "unknown_problem.ini": (
            """
            [problem]
            name = elliptic
            """,
            "elliptic",
        ),
        "missing_name.ini": (
            """
            [schedule]
            step_count = 2
            """,
            "name",
        ),
        "bad_grid.ini": (
            """
            [problem]
            name = heisenberg
            grid_size = 1
            """,
            "grid_size",
        ),
    }
    for filename, (body, needle) in cases.items():
        config = _write_config(tmp_path, body, name=filename)
        assert main(["solve", "--config", str(config)]) == 2, filename
        err = capsys.readouterr().err
        assert "config error" in err
        assert needle in err, filename


def test_solve_refuses_drift_problem(tmp_path, capsys):
    config = _write_config(
        tmp_path,
        """
        [problem]
        name = drift-constant-1d
        """,
    )
    assert main(["solve", "--config", str(config)]) == 2
    assert "drift-solve" in capsys.readouterr().err


def test_drift_solve_refuses_plain_problem(tmp_path, capsys):
    config = _write_config(
        tmp_path,
        """
        [problem]
        name = heisenberg
        """,
    )
    assert main(["drift-solve", "--config", str(config)]) == 2
    assert "solve" in capsys.readouterr().err


def test_drift_solve_constant_1d(tmp_path, capsys):
    config = _write_config(
        tmp_path,
        """
        [problem]
        name = drift-constant-1d
        """,
    )
    out_dir = tmp_path / "drift"
    assert main(["drift-solve", "--config", str(config), "--out", str(out_dir)]) == 0
    printed = capsys.readouterr().out
    assert "control cost 1" in printed
    assert "verdicts: pass" in printed

    controls = _data_rows(out_dir / "controls.csv")
    assert all(abs(float(row["Y1"]) + 1.0) <= 1e-6 for row in controls)
    trajectory = _data_rows(out_dir / "trajectory.csv")
    assert all(abs(float(row["x1"])) <= 1e-9 for row in trajectory)
    report = (out_dir / "report.txt").read_text()
    assert "cost identity" in report
    assert "(pass)" in report
    assert "time coordinate pinned" in report
    rows = _data_rows(out_dir / "results.csv")
    assert len(rows) == 5


def test_drift_solve_inline_drift_override(tmp_path):
    # zero drift over euclidean-2 behaves like the base geodesic problem
    # shifted by the time coordinate's energy contribution of 1/2.
    config = _write_config(
        tmp_path,
        """
        [problem]
        name = euclidean-2
        grid_size = 20

        [drift]
        kind = zero

        [schedule]
        step_count = 2
        """,
    )
    out_dir = tmp_path / "lifted"
    assert main(["drift-solve", "--config", str(config), "--out", str(out_dir)]) == 0
    rows = _data_rows(out_dir / "results.csv")
    assert float(rows[-1]["energy"]) == pytest.approx(1.0 + 0.5, rel=1e-8)


def test_diagnose_round_trip_solve(tmp_path, capsys):
    config = _write_config(
        tmp_path,
        """
        [problem]
        name = heisenberg
        grid_size = 40
        """,
    )
    out_dir = tmp_path / "run"
    assert main(["solve", "--config", str(config), "--out", str(out_dir)]) == 0
    capsys.readouterr()
    assert main(["diagnose", "--results", str(out_dir)]) == 0
    printed = capsys.readouterr().out
    assert "MISMATCH" not in printed
    assert "all 5 rows re-derived" in printed


def test_diagnose_round_trip_drift(tmp_path, capsys):
    config = _write_config(
        tmp_path,
        """
        [problem]
        name = drift-constant-1d
        """,
    )
    out_dir = tmp_path / "run"
    assert main(["drift-solve", "--config", str(config), "--out", str(out_dir)]) == 0
    capsys.readouterr()
    assert main(["diagnose", "--results", str(out_dir)]) == 0
    assert "MISMATCH" not in capsys.readouterr().out


def test_diagnose_detects_tampering(tmp_path, capsys):
    config = _write_config(
        tmp_path,
        """
        [problem]
        name = euclidean-2
        grid_size = 10

        [schedule]
        step_count = 2
        """,
    )
    out_dir = tmp_path / "run"
    assert main(["solve", "--config", str(config), "--out", str(out_dir)]) == 0
    results = out_dir / "results.csv"
    lines = results.read_text().splitlines()
    header_idx = next(i for i, l in enumerate(lines) if l.startswith("q,"))
    row = lines[header_idx + 1].split(",")
    row[1] = "2.5"
    lines[header_idx + 1] = ",".join(row)
    results.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["diagnose", "--results", str(out_dir)]) == 1
    assert "MISMATCH" in capsys.readouterr().out


def test_diagnose_requires_results_directory(tmp_path):
    assert main(["diagnose", "--results", str(tmp_path)]) == 2


def test_parse_config_roundtrip_values(tmp_path):
    config = _write_config(
        tmp_path,
        """
        [problem]
        name = heisenberg
        end = 0, 0, 0.5
        grid_size = 24
        unique_limit = false
        seed_amplitude = 0.07

        [schedule]
        q_start = 2
        ratio = 5
        step_count = 3

        [solver]
        max_iterations = 123
        quasi_newton = false

        [drift]
        kind = constant
        vector = 0.1, 0, 0
        integrator_steps = 7
        free_time = yes
        """,
    )
    spec = parse_config(config)
    assert spec.problem.grid_size == 24
    np.testing.assert_array_equal(spec.problem.end, [0.0, 0.0, 0.5])
    assert not spec.problem.unique_limit
    assert spec.problem.seed_amplitude == 0.07
    np.testing.assert_allclose(spec.schedule.q_values(), [2.0, 10.0, 50.0])
    assert spec.solver.max_iterations == 123
    assert not spec.solver.quasi_newton
    assert spec.solver.grid_size == 24
    assert spec.problem.has_drift
    assert spec.problem.integrator_steps == 7
    assert spec.free_time
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "missing.ini")


def test_console_script_is_installed():
    exe = shutil.which("pengeo")
    assert exe is not None
    proc = subprocess.run(
        [exe, "list-problems"], capture_output=True, text=True, timeout=120
    )
    assert proc.returncode == 0
    assert "heisenberg" in proc.stdout
