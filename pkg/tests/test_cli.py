import json
import subprocess
import sys

import pytest

from jkoflow.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from jkoflow.verify import thread_cap


def write_config(tmp_path, name="cfg.json", **overrides):
    cfg = {
        "grid": {"a": 0.0, "b": 1.0, "n": 32},
        "cost": "power:2",
        "initial": "cosine:0.5",
        "jko": {"h": 1e-3, "steps": 10},
        "checks": ["fisher:2", "lipschitz", "compare_pde"],
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key] = {**cfg[key], **value}
        else:
            cfg[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def test_run_cosine_example(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(write_config(tmp_path)), "--out", str(out)]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["pass"] is True
    cmp = next(c for c in summary["checks"] if c["check"] == "compare_pde")
    assert cmp["value"] <= 5e-2
    for name in ("meta.json", "state_00000.csv", "state_00010.csv", "monotonicity.csv", "fisher_p2.dat",
                 "lipschitz.dat", "final_state.dat"):
        assert (out / name).exists(), name
    header = (out / "monotonicity.csv").read_text().splitlines()[0]
    assert header == "k,t,fisher_p1,fisher_p2,fisher_p4,lip,omega_viol,fg_residual"
    assert "PASS compare_pde" in capsys.readouterr().out


def test_run_uniform_all_checks(tmp_path):
    cfg = write_config(
        tmp_path,
        initial="uniform",
        grid={"n": 16},
        jko={"h": 1e-2, "steps": 3},
        checks=["fisher:1", "fisher:2", "lipschitz", "modulus", "five_gradients", "compare_pde",
                "comparison_principle", "homogeneity:2.5"],
    )
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out)]) == EXIT_OK
    rows = (out / "monotonicity.csv").read_text().splitlines()[1:]
    for row in rows:
        fields = [float(v) for v in row.split(",")[2:6]]
        assert fields == [0.0, 0.0, 0.0, 0.0]


def test_bad_grid_size_names_field(tmp_path, capsys):
    cfg = write_config(tmp_path, grid={"n": 0})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "grid.n" in capsys.readouterr().err


@pytest.mark.parametrize(
    "overrides,needle",
    [
        ({"cost": "cubic"}, "cost"),
        ({"checks": ["entropy"]}, "checks"),
        ({"initial": "cosine:1.5"}, "initial"),
        ({"jko": {"h": -1.0}}, "jko.h"),
        ({"jko": {"solver": "BruteForce"}}, "BruteForce"),
        ({"initial": "csv:missing.csv"}, "initial"),
        ({"extra": 1}, "extra"),
    ],
)
def test_config_errors(tmp_path, capsys, overrides, needle):
    cfg = write_config(tmp_path, **overrides)
    assert main(["step", str(cfg)]) == EXIT_CONFIG
    assert needle in capsys.readouterr().err


def test_missing_and_malformed_config(tmp_path, capsys):
    assert main(["step", str(tmp_path / "nope.json")]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["step", str(bad)]) == EXIT_CONFIG


def test_failing_check_exit_code(tmp_path):
    cfg = write_config(tmp_path, compare_tol=1e-12)
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out)]) == EXIT_CHECK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["pass"] is False
    assert summary["pass"] == all(c["pass"] for c in summary["checks"])
    assert summary["location"] == "compare_pde"


def test_solver_failure_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, jko={"max_iter": 1, "tol": 1e-14})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_SOLVER
    assert "solver failure" in capsys.readouterr().err


def test_runs_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, initial="random:3,4", checks=["fisher:2", "modulus"])
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(cfg), "--out", str(a)]) == EXIT_OK
    assert main(["run", str(cfg), "--out", str(b)]) == EXIT_OK
    for path in sorted(a.glob("*.csv")) + sorted(a.glob("*.dat")):
        assert path.read_bytes() == (b / path.name).read_bytes(), path.name


def test_csv_initial_relative_to_config(tmp_path):
    from jkoflow.geometry import Grid
    from jkoflow.profiles import random_trig

    random_trig(Grid(0, 1, 32), 5).to_csv(tmp_path / "init.csv")
    cfg = write_config(tmp_path, initial="csv:init.csv", checks=["lipschitz"])
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK


def test_step_prints_diagnostics(tmp_path, capsys):
    assert main(["step", str(write_config(tmp_path))]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    for key in ("mass", "entropy_before", "entropy_after", "objective", "kkt_residual", "fisher_p2", "rho"):
        assert key in payload
    assert payload["entropy_after"] < payload["entropy_before"]
    assert len(payload["rho"]) == 32


def test_verify_filter(tmp_path, capsys):
    code = main(["verify", "--filter", "fisher", "--out", str(tmp_path)])
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("[")]
    assert len(lines) == 2
    assert all("fisher" in ln for ln in lines)
    assert code == EXIT_OK
    data = json.loads((tmp_path / "verify.json").read_text())
    assert data["pass"] is True and len(data["rows"]) == 2


def test_verify_unknown_filter(capsys):
    assert main(["verify", "--filter", "no_such_row"]) == EXIT_CONFIG


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("JKO_THREADS", "3")
    assert thread_cap() == 3
    monkeypatch.setenv("JKO_THREADS", "zero")
    assert thread_cap() == 1
    monkeypatch.setenv("JKO_THREADS", "0")
    assert thread_cap() == 1


def test_console_entry_point(tmp_path):
    cfg = write_config(tmp_path, grid={"n": 0})
    proc = subprocess.run([sys.executable, "-m", "jkoflow.cli", "step", str(cfg)], capture_output=True, text=True)
    assert proc.returncode == EXIT_CONFIG
    assert "grid.n" in proc.stderr
