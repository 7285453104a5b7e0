import csv
import json

import pytest

from ssvac.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_VALIDATION,
    OUTPUT_ENV,
    RunConfig,
    config_from_mapping,
    main,
)


def _run(tmp_path, *args):
    return main([*args, "-o", str(tmp_path)])


def _rows(path):
    return list(csv.reader(line for line in path.read_text().splitlines() if not line.startswith("#")))


def test_critical_points(tmp_path, capsys):
    assert _run(tmp_path, "critical-points", "--gamma", "1.75", "--lambda", "0.7") == EXIT_OK
    rows = _rows(tmp_path / "critical_points.csv")
    assert rows[0][:3] == ["id", "V", "C"]
    assert [r[0] for r in rows[1:]] == ["P0", "P1", "P2", "P3", "P4", "P5", "P6"]
    p5 = rows[6]
    assert float(p5[1]) == pytest.approx(-1.6, abs=1e-12)
    assert "P5" in capsys.readouterr().out


def test_critical_points_gamma3(tmp_path):
    assert _run(tmp_path, "critical-points", "--gamma", "3", "--lambda", "0.5") == EXIT_OK
    assert len(_rows(tmp_path / "critical_points.csv")) == 6


@pytest.mark.parametrize("args", [
    ("critical-points", "--gamma", "0.9", "--lambda", "0.5"),
    ("solve", "--gamma", "1.75", "--lambda", "0.7", "--mach", "1", "--u-plus", "2", "--config", "missing.json"),
    ("solve", "--gamma", "abc"),
    ("sweep", "--gamma", "1.75", "--lambda", "0.7", "--n-mach", "-3"),
    ("solve", "--gamma", "1.75", "--lambda", "0.7", "--mach", "0", "--rtol", "-1"),
])
def test_bad_config(tmp_path, args):
    assert _run(tmp_path, *args) == EXIT_CONFIG


def test_config_file(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"gamma": 1.75, "lambda": 0.7, "mach": -3.0, "times": [1.0, 2.0]}))
    assert _run(tmp_path, "solve", "--config", str(cfg)) == EXIT_OK
    sol = json.loads((tmp_path / "solution.json").read_text())
    assert sol["regime"].startswith("shock")
    assert (tmp_path / "profile_t1.csv").exists()
    # flags override the file
    assert _run(tmp_path / "b", "solve", "--config", str(cfg), "--mach", "0") == EXIT_OK
    assert json.loads((tmp_path / "b" / "solution.json").read_text())["jump"] is None


def test_config_rejects_unknown_and_bad_types():
    with pytest.raises(ValueError):
        config_from_mapping({"gama": 2.0})
    with pytest.raises(ValueError):
        config_from_mapping({"gamma": "two"})
    with pytest.raises(ValueError):
        config_from_mapping({"gamma": float("nan")})
    assert config_from_mapping({"lambda": 0.5}).lam == 0.5
    assert RunConfig(u_plus=2.0, c_plus=4.0).effective_mach() == 0.5


def test_solve_outputs(tmp_path, capsys):
    assert _run(tmp_path, "solve", "--gamma", "1.75", "--lambda", "0.7", "--mach", "-3") == EXIT_OK
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert diag["xi_v"] < diag["xi_s"] < 0
    assert diag["alpha_hat"] == pytest.approx(0.5, abs=0.02)
    assert diag["two_shock_entropy"]
    sol = json.loads((tmp_path / "solution.json").read_text())
    for seg in sol["segments"]:
        assert (tmp_path / seg["file"]).exists()
    assert _rows(tmp_path / "paths.csv")[0] == ["t", "x_v", "x_s"]
    assert "shock" in capsys.readouterr().out


def test_partial_flow(tmp_path):
    assert _run(tmp_path, "solve", "--gamma", "2.5", "--lambda", "-1", "--mach", "0.5") == EXIT_OK
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert diag["regime"] == "partial_flow" and diag["xi_star"] > 0


def test_outputs_are_deterministic(tmp_path):
    args = ("solve", "--gamma", "1.75", "--lambda", "0.7", "--mach", "-4")
    assert _run(tmp_path / "a", *args) == EXIT_OK
    assert _run(tmp_path / "b", *args) == EXIT_OK
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["critical-points", "--gamma", "2", "--lambda", "0.5"]) == EXIT_OK
    assert (tmp_path / "env" / "critical_points.csv").exists()
    # an explicit flag wins over the environment
    assert _run(tmp_path / "flag", "critical-points", "--gamma", "2", "--lambda", "0.5") == EXIT_OK
    assert (tmp_path / "flag" / "critical_points.csv").exists()


def test_sweep(tmp_path):
    assert _run(tmp_path, "sweep", "--gamma", "1.75", "--lambda", "0.7", "--mach-min", "-5",
                "--mach-max", "5", "--n-mach", "21", "--build") == EXIT_OK
    rows = _rows(tmp_path / "sweep.csv")
    assert len(rows) == 22
    regimes = {r[1] for r in rows[1:]}
    assert regimes == {"continuous_stationary_C1", "continuous_accelerating_physical_singularity",
                       "shock_plus_physical_singularity_left_moving_shock"}
    th = json.loads((tmp_path / "thresholds.json").read_text())
    assert th["ell"] == pytest.approx(8 / 3)
    assert all(r[-1] == "" for r in rows[1:])


def test_empty_sweep(tmp_path):
    assert _run(tmp_path, "sweep", "--gamma", "1.75", "--lambda", "0.7", "--mach-min", "1",
                "--mach-max", "0", "--n-mach", "5") == EXIT_OK
    assert _rows(tmp_path / "sweep.csv") == [["mach", "regime"]]


def test_validate_passes(tmp_path):
    assert _run(tmp_path, "validate", "--gamma", "1.75", "--lambda", "0.7", "--mach", "-3",
                "--n-cells", "800") == EXIT_OK
    report = json.loads((tmp_path / "validation.json").read_text())
    assert report["ok"]
    names = {c["name"] for c in report["checks"]}
    assert {"rh_residual", "jump_involution", "oracle_l1_error", "decay_exponent"} <= names


def test_validate_skip_oracle(tmp_path):
    assert _run(tmp_path, "validate", "--gamma", "1.75", "--lambda", "0.7", "--mach", "0",
                "--skip-oracle") == EXIT_OK
    report = json.loads((tmp_path / "validation.json").read_text())
    oracle = [c for c in report["checks"] if c["name"] == "oracle_l1_error"][0]
    assert oracle["status"] == "skipped"


def test_validate_detects_corrupted_shock_solve(tmp_path):
    # a loose root tolerance in the jump map breaks the jump conditions
    assert _run(tmp_path, "validate", "--gamma", "1.75", "--lambda", "0.7", "--mach", "-3",
                "--jump-xtol", "0.1", "--skip-oracle") == EXIT_VALIDATION
    report = json.loads((tmp_path / "validation.json").read_text())
    failed = {c["name"] for c in report["checks"] if c["status"] == "fail"}
    assert "rh_residual" in failed


def test_trace(tmp_path):
    assert _run(tmp_path, "trace", "--gamma", "1.75", "--lambda", "0.7", "--trajectory", "sigma_prime",
                "--locus") == EXIT_OK
    lines = (tmp_path / "trace_sigma_prime.csv").read_text().splitlines()
    assert lines[0].endswith("critical_point:P5")
    assert (tmp_path / "locus_sigma_prime.csv").exists()


def test_oracle_command(tmp_path):
    assert _run(tmp_path, "oracle", "--gamma", "1.75", "--lambda", "0.7", "--mach", "0",
                "--n-cells", "500") == EXIT_OK
    report = json.loads((tmp_path / "oracle.json").read_text())
    assert report["l1_rel_error_u"] < 0.03
    assert (tmp_path / "oracle_snapshot.csv").exists() and (tmp_path / "oracle_exact.csv").exists()
