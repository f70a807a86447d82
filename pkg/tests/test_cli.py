import subprocess
import sys

import numpy as np
import pytest

from mfgcert import grid as G
from mfgcert.certificates import Certificate
from mfgcert.cli import (
    EXIT_CONFIG,
    EXIT_FAIL,
    EXIT_IO,
    EXIT_MAXITER,
    EXIT_PASS,
    load_config,
    main,
    parse_config,
)
from mfgcert.errors import ConfigError
from mfgcert.solver import solve

UNIFORM = """
[domain]
extents = 2, 2
cells = 16, 16

[congestion]
q = 2
r = 3
eps = 1e-3

[coupling]
potential = constant
rho = 1
theta = 1
"""

WELL = """
[domain]
extents = 2, 2
cells = 16, 16

[congestion]
q = 2
r = 3
{eps_line}

[coupling]
potential = cosine_well
rho = 0.1
theta = 1

[coupling.potential]
depth = 5
"""


def write(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return path


@pytest.fixture
def solved(tmp_path):
    cfg = write(tmp_path, UNIFORM)
    out = tmp_path / "run"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == EXIT_PASS
    return cfg, out


def test_solve_uniform_writes_artifacts(solved):
    _, out = solved
    for name in ("m", "u", "p", "mu", "V", "w_0", "w_1", "momentum_0", "momentum_1"):
        assert (out / f"{name}.f64").exists() and (out / f"{name}.f64.hdr").exists()
    cert = Certificate.parse((out / "certificate.txt").read_text())
    assert float(cert["gap_rel"]) <= 1e-5
    assert cert["verdict"] == "pass"
    manifest = (out / "manifest.txt").read_text()
    assert "seed=0" in manifest and "numpy=" in manifest
    m, header, _ = G.read_field(out / "m.f64")
    assert header["kind"] == "cell"
    np.testing.assert_allclose(m, 0.25, atol=1e-4)


def test_convergence_csv_round_trips(solved, tmp_path):
    cfg, out = solved
    lines = (out / "convergence.csv").read_text().splitlines()
    assert lines[0] == "iter,primal_res,dual_res,gap,objective,mass_error"
    run = load_config(cfg)
    sol = solve(run.problem(), run.solver)
    assert len(lines) - 1 == len(sol.history)
    for line, row in zip(lines[1:], sol.history):
        values = line.split(",")
        assert int(values[0]) == row["iter"]
        for text, key in zip(values[1:], ("primal_res", "dual_res", "gap", "objective", "mass_error")):
            assert float(text) == row[key] or (np.isnan(row[key]) and text == "nan")


def test_reruns_are_byte_identical(solved, tmp_path):
    cfg, out = solved
    again = tmp_path / "again"
    assert main(["solve", "--config", str(cfg), "--out", str(again)]) == EXIT_PASS
    for path in out.iterdir():
        assert path.read_bytes() == (again / path.name).read_bytes(), path.name


def test_domain_measure_one_rejected(tmp_path, capsys):
    cfg = write(tmp_path, UNIFORM.replace("extents = 2, 2", "extents = 1, 1"))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "strictly greater than 1" in capsys.readouterr().err


def test_regime_violation_rejected(tmp_path, capsys):
    cfg = write(tmp_path, UNIFORM.replace("eps = 1e-3", "eps = 0"))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "q > d" in capsys.readouterr().err


@pytest.mark.parametrize("text", [
    UNIFORM + "\n[solver]\nwarp = 9\n",
    UNIFORM + "\n[extras]\nx = 1\n",
    UNIFORM.replace("rho = 1", "rho = one"),
    UNIFORM.replace("potential = constant", "potential = volcano"),
    WELL.format(eps_line="eps = 1e-3").replace("depth = 5", "dpeth = 5"),
    UNIFORM.replace("eps = 1e-3", "eps = 1e-3\neps_schedule = 1e-2"),
    "[domain]\nextents = 2, 2\n",
])
def test_bad_configs(tmp_path, text):
    with pytest.raises(ConfigError):
        parse_config(text)
    cfg = write(tmp_path, text)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_missing_config_is_io_error(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == EXIT_IO


def test_certify_fresh_run(solved):
    _, out = solved
    assert main(["certify", str(out)]) == EXIT_PASS


def test_certify_detects_tampering(solved, capsys):
    _, out = solved
    m = np.fromfile(out / "m.f64", dtype="<f8")
    m[7] += 0.05
    m.tofile(out / "m.f64")
    capsys.readouterr()
    assert main(["certify", str(out)]) == EXIT_FAIL
    text = capsys.readouterr().out
    assert "checksum:m" in text
    assert "mass_error" in text


def test_certify_missing_field(solved):
    _, out = solved
    (out / "u.f64").unlink()
    assert main(["certify", str(out)]) == EXIT_IO


def test_max_iter_exit_still_writes(tmp_path):
    text = WELL.format(eps_line="eps = 1e-3") + "\n[solver]\nmax_iter = 3\n"
    cfg = write(tmp_path, text)
    out = tmp_path / "short"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == EXIT_MAXITER
    assert "status=max_iter" in (out / "manifest.txt").read_text()
    assert (out / "m.f64").exists()


def test_seed_flag_overrides(tmp_path):
    cfg = write(tmp_path, UNIFORM)
    out = tmp_path / "seeded"
    assert main(["solve", "--config", str(cfg), "--out", str(out), "--seed", "7"]) == EXIT_PASS
    assert "seed=7" in (out / "manifest.txt").read_text()
    assert "seed = 7" in (out / "config.ini").read_text()


def test_threads_flag_and_env(tmp_path, monkeypatch):
    cfg = write(tmp_path, UNIFORM)
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a"), "--threads", "1"]) == EXIT_PASS
    monkeypatch.setenv("MFG_THREADS", "2")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "b")]) == EXIT_PASS
    monkeypatch.setenv("MFG_THREADS", "zero")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "c")]) == EXIT_CONFIG
    assert (tmp_path / "a" / "m.f64").read_bytes() == (tmp_path / "b" / "m.f64").read_bytes()


def test_potential_from_field_file(tmp_path, solved):
    _, out = solved
    text = UNIFORM.replace("potential = constant", f"V_file = {out / 'V.f64'}")
    cfg = write(tmp_path, text, "vfile.ini")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "vf")]) == EXIT_PASS
    assert (tmp_path / "vf" / "m.f64").read_bytes() == (out / "m.f64").read_bytes()


def test_sweep_single_stage_matches_solve(tmp_path):
    solve_cfg = write(tmp_path, WELL.format(eps_line="eps = 0.1"), "a.ini")
    sweep_cfg = write(tmp_path, WELL.format(eps_line="eps_schedule = 0.1"), "b.ini")
    assert main(["solve", "--config", str(solve_cfg), "--out", str(tmp_path / "solo")]) == EXIT_PASS
    assert main(["sweep", "--config", str(sweep_cfg), "--out", str(tmp_path / "sw")]) == EXIT_PASS
    stage = tmp_path / "sw" / "stage_00"
    for path in (tmp_path / "solo").iterdir():
        assert path.read_bytes() == (stage / path.name).read_bytes(), path.name


def test_sweep_distances_decrease(tmp_path):
    cfg = write(tmp_path, WELL.format(eps_line="eps_schedule = 1e-1, 1e-2, 1e-3, 1e-4"))
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == EXIT_PASS
    rows = (out / "stages.csv").read_text().splitlines()
    assert rows[0] == "eps,dm_l2,gap"
    dm = [float(r.split(",")[1]) for r in rows[2:]]
    assert len(dm) == 3 and all(a > b for a, b in zip(dm, dm[1:]))
    for k in range(4):
        assert main(["certify", str(out / f"stage_{k:02d}")]) == EXIT_PASS


def test_sweep_rejects_increasing_schedule(tmp_path):
    cfg = write(tmp_path, WELL.format(eps_line="eps_schedule = 1e-3, 1e-2"))
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_selftest(capsys):
    assert main(["selftest"]) == EXIT_PASS
    table = capsys.readouterr().out
    for suite in ("conjugacy", "moreau", "projection", "adjointness", "poisson_ratio"):
        assert suite in table
    assert main(["selftest", "--debug-fail-selftest"]) == EXIT_FAIL


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mfgcert.cli", "selftest"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "max_error" in proc.stdout
