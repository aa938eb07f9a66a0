from __future__ import annotations

from functools import cached_property
from pathlib import Path

import numpy as np
import pytest

from hall_steady import cli
from hall_steady.elliptic import CompatibilityError
from hall_steady.fields import load_field
from hall_steady.grid import Grid
from hall_steady.reports import read_kv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


class BrokenDivGrid(Grid):
    """Grid whose divergence stencil has one corrupted coefficient."""

    @cached_property
    def div(self):
        D = super().div.tolil(copy=True)
        D[self.n_cells // 2, self.face_interior[len(self.face_interior) // 2]] += 1.0
        return D.tocsr()


# -- check-operators ---------------------------------------------------------------------


def test_check_operators_passes(capsys, tmp_path):
    code, out, _ = run(capsys, "check-operators", "--n", 8, "--out", tmp_path)
    assert code == cli.EXIT_OK
    assert "FAILED" not in out
    assert "poincare_constant" in out
    report = read_kv(tmp_path / "check_operators.txt")
    assert report["n"] == "8"
    assert all(report[k] == "true" for k in report if k.endswith(".passed"))


def test_check_operators_negative_control(capsys, tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "Grid", BrokenDivGrid)
    code, out, err = run(capsys, "check-operators", "--n", 8, "--out", tmp_path)
    assert code != cli.EXIT_OK
    assert "div_curl_zero: " in out and "FAILED" in out
    assert "failed identities:" in err and "div_curl_zero" in err


def test_check_operators_bad_resolution(capsys, tmp_path):
    code, _, err = run(capsys, "check-operators", "--n", 1, "--out", tmp_path)
    assert code == cli.EXIT_CONFIG
    assert "configuration error" in err


# -- solve ----------------------------------------------------------------------------


def test_solve_zero_config(capsys, tmp_path):
    code, out, _ = run(capsys, "solve", "--config", CONFIGS / "zero.cfg", "--out", tmp_path)
    assert code == cli.EXIT_OK
    for name in ("u.field", "p.field", "B.field"):
        assert not np.any(load_field(tmp_path / name).data)
    report = read_kv(tmp_path / "report.txt")
    assert report["converged"] == "true" and report["iterations"] == "1"
    assert (tmp_path / "iterations.csv").exists()
    assert "converged = true" in out


def test_solve_small_config(capsys, tmp_path):
    code, out, _ = run(capsys, "solve", "--config", CONFIGS / "small.cfg", "--out", tmp_path)
    assert code == cli.EXIT_OK
    report = read_kv(tmp_path / "report.txt")
    diag = read_kv(tmp_path / "diagnostics.txt")
    assert report["converged"] == "true"
    assert float(diag["rho_hat"]) < 1.0
    assert diag["uniqueness_margin"] == "true"
    # 17 significant digits
    assert len(report["residual"].replace("e", " ").split()[0].replace(".", "").lstrip("0")) >= 15


def test_solve_is_deterministic(capsys, tmp_path):
    cfg = write_cfg(tmp_path, "n = 8\namplitude = 0.05\n")
    for d in ("a", "b"):
        assert run(capsys, "solve", "--config", cfg, "--out", tmp_path / d)[0] == cli.EXIT_OK
    for name in ("u.field", "p.field", "B.field", "iterations.csv", "report.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_solve_with_workers_matches_serial(capsys, tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, "n = 8\namplitude = 0.05\n")
    run(capsys, "solve", "--config", cfg, "--out", tmp_path / "serial")
    monkeypatch.setenv("HALL_STEADY_WORKERS", "2")
    assert run(capsys, "solve", "--config", cfg, "--out", tmp_path / "env")[0] == cli.EXIT_OK
    a = load_field(tmp_path / "serial" / "B.field").data
    b = load_field(tmp_path / "env" / "B.field").data
    np.testing.assert_allclose(b, a, rtol=0, atol=1e-12 * np.max(np.abs(a)))


@pytest.mark.parametrize("text", ["n = 4\n", "q = 2\n", "bogus = 1\n", "n = x\n", "modes = 1, 1, 1\ncoeffs = 1, 1, 1\n"])
def test_solve_config_errors(text, capsys, tmp_path):
    code, _, err = run(capsys, "solve", "--config", write_cfg(tmp_path, text), "--out", tmp_path)
    assert code == cli.EXIT_CONFIG
    assert "configuration error" in err


def test_missing_config_file(capsys, tmp_path):
    assert run(capsys, "solve", "--config", tmp_path / "absent.cfg")[0] == cli.EXIT_CONFIG


@pytest.mark.parametrize("workers", ["0", "many"])
def test_bad_worker_count(workers, capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("HALL_STEADY_WORKERS", workers)
    assert run(capsys, "solve", "--config", CONFIGS / "zero.cfg", "--out", tmp_path)[0] == cli.EXIT_CONFIG


def test_solver_failure_exit_code(capsys, tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise CompatibilityError("source violates the compatibility condition")

    monkeypatch.setattr(cli, "solve_hall_mhd", broken)
    code, _, err = run(capsys, "solve", "--config", CONFIGS / "zero.cfg", "--out", tmp_path)
    assert code == cli.EXIT_SOLVER
    assert "solver failure" in err


# -- mms --------------------------------------------------------------------------------


def test_mms_single_level_is_rejected(capsys, tmp_path):
    code, _, err = run(capsys, "mms", "--levels", "16", "--out", tmp_path)
    assert code == cli.EXIT_CONFIG
    assert "3 levels" in err


@pytest.mark.parametrize("levels", ["8,12,24", "8,x,32"])
def test_mms_bad_levels(levels, capsys, tmp_path):
    assert run(capsys, "mms", "--levels", levels, "--out", tmp_path)[0] == cli.EXIT_CONFIG


def test_mms_zero_family_is_rejected(capsys, tmp_path):
    code = run(capsys, "mms", "--config", CONFIGS / "zero.cfg", "--levels", "8,16,32", "--out", tmp_path)[0]
    assert code == cli.EXIT_CONFIG


def test_mms_discrete_mode_flags_exactness(capsys, tmp_path):
    cfg = write_cfg(tmp_path, "outer_tol = 1e-10\ninner_rtol = 1e-12\n")
    code, out, _ = run(capsys, "mms", "--config", cfg, "--levels", "8,16,32", "--mode", "discrete",
                       "--out", tmp_path)
    assert code == cli.EXIT_OK
    assert "solver-exactness = true" in out
    lines = (tmp_path / "convergence.csv").read_text().splitlines()
    assert lines[0] == "n,h,err_u_L2,err_B_L2,order_u,order_B" and len(lines) == 4


def test_mms_aborted_study_writes_partial_table(capsys, tmp_path):
    cfg = write_cfg(tmp_path, "max_outer = 1\namplitude = 0.1\n")
    code, _, err = run(capsys, "mms", "--config", cfg, "--levels", "8,16,32", "--out", tmp_path)
    assert code == cli.EXIT_OK
    assert "aborted" in err
    assert len((tmp_path / "convergence.csv").read_text().splitlines()) == 2


# -- diagnose -----------------------------------------------------------------------------


def test_diagnose_zero_config(capsys, tmp_path):
    cfg = write_cfg(tmp_path, "n = 8\nforcing = zero\n")
    code, _, _ = run(capsys, "diagnose", "--config", cfg, "--out", tmp_path)
    assert code == cli.EXIT_OK
    diag = read_kv(tmp_path / "diagnostics.txt")
    assert float(diag["agreement_H1"]) <= 1e-12
    assert float(diag["rho_hat"]) <= 1e-6
    assert diag["second_start_converged"] == "true"


def test_diagnose_small_amplitude(capsys, tmp_path):
    cfg = write_cfg(tmp_path, "n = 8\namplitude = 1e-2\n")
    code, _, _ = run(capsys, "diagnose", "--config", cfg, "--out", tmp_path)
    assert code == cli.EXIT_OK
    diag = read_kv(tmp_path / "diagnostics.txt")
    assert float(diag["agreement_H1"]) <= 10 * 1e-8
    assert float(diag["rho_hat"]) < 1.0
    assert diag["converged"] == "true"


def test_diagnose_stress_config_is_well_formed(capsys, tmp_path):
    code, out, _ = run(capsys, "diagnose", "--config", CONFIGS / "stress.cfg", "--out", tmp_path)
    assert code == cli.EXIT_OK
    diag = read_kv(tmp_path / "diagnostics.txt")
    for key in ("converged", "rho_hat", "uniqueness_margin", "f_L2_as_Hminus1_surrogate", "g_Lq", "C_hat"):
        assert key in diag
    assert diag["converged"] in ("true", "false")
    rho = float(diag["rho_hat"])
    assert np.isnan(rho) or rho >= 0.0
    if diag["uniqueness_margin"] == "true":
        assert rho < 1.0
