import subprocess
import sys

import numpy as np
import pytest

from rtsuperconv.cli import main, read_config, UsageError


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_no_command(capsys):
    code, _, err = run([], capsys)
    assert code == 1 and "usage" in err


def test_unknown_flag(capsys):
    code, _, err = run(["run", "--bogus"], capsys)
    assert code == 1 and "unrecognized" in err


def test_invalid_value(capsys):
    assert run(["run", "--family", "piecewise", "--n0", "5"], capsys)[0] == 1
    assert run(["analyze-mesh", "--family", "uniform", "--C", "-1"], capsys)[0] == 1
    assert run(["recover"], capsys)[0] == 1


def test_missing_file(capsys, tmp_path):
    code, _, err = run(["solve", "--mesh", str(tmp_path / "nope"), "--out", str(tmp_path / "x")], capsys)
    assert code == 1


def test_solver_failure_exit_code(capsys, tmp_path):
    code, out, err = run(["run", "--n0", "2", "--levels", "2", "--tol", "1e-40"], capsys)
    assert code == 2
    assert "solver failure" in err


def test_run_echoes_and_writes_csv(capsys, tmp_path):
    out_csv = tmp_path / "r.csv"
    code, out, _ = run(["run", "--n0", "4", "--levels", "2", "--out", str(out_csv)], capsys)
    assert code == 0
    assert "# family = uniform" in out
    assert "# n0 = 4" in out
    assert out_csv.read_text().startswith("nu,h,err_p")


def test_run_is_deterministic(capsys, tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert run(["run", "--family", "perturbed", "--n0", "4", "--levels", "2", "--out", str(p)], capsys)[0] == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_config_file_and_override(capsys, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# study\nn0 = 4\nlevels = 2\nfamily = piecewise\nhelmholtz = true\n")
    code, out, _ = run(["run", "--config", str(cfg), "--levels", "3"], capsys)
    assert code == 0
    assert "# family = piecewise" in out
    assert "# levels = 3" in out
    assert "# helmholtz = True" in out
    assert "err_grad" in out


def test_config_errors(capsys, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("colour = red\n")
    assert run(["run", "--config", str(cfg)], capsys)[0] == 1
    cfg.write_text("family = hex\n")
    assert run(["run", "--config", str(cfg)], capsys)[0] == 1
    cfg.write_text("just words\n")
    with pytest.raises(UsageError):
        read_config(cfg)


def test_verify_identities(capsys):
    code, out, _ = run(["verify-identities", "--trials", "5"], capsys)
    assert code == 0
    assert "commuting diagram" in out and "FAIL" not in out


def test_verify_identities_failure_exit(capsys):
    assert run(["verify-identities", "--trials", "2", "--tol", "1e-30"], capsys)[0] == 1


def test_analyze_family(capsys, tmp_path):
    out_csv = tmp_path / "s.csv"
    code, out, _ = run(["analyze-mesh", "--family", "piecewise", "--levels", "3", "--out", str(out_csv)], capsys)
    assert code == 0
    assert "sigma_hat" in out
    assert out_csv.read_text().splitlines()[0].startswith("level,h,|E1|,|E2|")


def test_pipeline(capsys, tmp_path):
    mesh, sol, rec, ind = (tmp_path / n for n in ("m.txt", "p.csv", "g.csv", "eta.csv"))
    assert run(["generate-mesh", "--family", "perturbed", "--n", "8", "--out", str(mesh)], capsys)[0] == 0
    assert run(["analyze-mesh", "--mesh", str(mesh), "--alpha", "0.5"], capsys)[0] == 0
    assert run(["solve", "--mesh", str(mesh), "--out", str(sol)], capsys)[0] == 0
    code, out, _ = run(["recover", "--mesh", str(mesh), "--solution", str(sol),
                        "--out", str(rec), "--indicators", str(ind)], capsys)
    assert code == 0 and "eta =" in out
    assert np.loadtxt(ind, delimiter=",", skiprows=1).shape[0] == 128


def test_thread_limit_env(capsys, monkeypatch):
    monkeypatch.setenv("RT_SUPERCONV_THREADS", "1")
    assert run(["run", "--n0", "2", "--levels", "2"], capsys)[0] == 0
    monkeypatch.setenv("RT_SUPERCONV_THREADS", "zero")
    assert run(["run", "--n0", "2", "--levels", "2"], capsys)[0] == 1


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "rtsuperconv", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "rtsuperconv" in r.stdout


def test_analyze_generated_uniform(capsys, tmp_path):
    mesh = tmp_path / "u.txt"
    assert run(["generate-mesh", "--n", "8", "--out", str(mesh)], capsys)[0] == 0
    code, out, _ = run(["analyze-mesh", "--mesh", str(mesh)], capsys)
    assert code == 0
    row = [l for l in out.splitlines() if l.startswith("0,")][0].split(",")
    assert row[3] == "0" and row[5] == "4"


def test_verify_identities_full(capsys):
    code, out, _ = run(["verify-identities", "--trials", "100", "--seed", "7"], capsys)
    assert code == 0
    assert "Marini" in out and "Helmholtz" in out
