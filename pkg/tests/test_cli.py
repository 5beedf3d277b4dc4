import subprocess
import sys

import pytest

from marigold.cli import main

GOOD = "[problem]\nkind = quadratic\nm = 2\n[run]\nbalancer = marigold, ls\nseeds = 0, 1\niterations = 10\n"


@pytest.fixture
def good(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text(GOOD)
    return p


def test_validate_ok(good, capsys):
    assert main(["validate", "--config", str(good)]) == 0
    assert "ok" in capsys.readouterr().out


def test_validate_reports_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text(GOOD + "[marigold]\nr = -1\n")
    assert main(["validate", "--config", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "marigold.r" in err and f"{bad}:9" in err
    assert main(["validate", "--config", str(tmp_path / "missing.ini")]) == 1


def test_run_with_seed_override(good, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(good), "--seed", "7", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["ls_seed7.csv", "marigold_seed7.csv", "summary.csv"]
    assert "summary.csv" in capsys.readouterr().out


def test_run_uses_environment_directory(good, tmp_path, monkeypatch):
    monkeypatch.setenv("MARIGOLD_OUT", str(tmp_path / "env"))
    assert main(["run", "--config", str(good)]) == 0
    assert (tmp_path / "env" / "summary.csv").exists()


def test_run_numeric_failure_exit_code(tmp_path):
    cfg = tmp_path / "div.ini"
    cfg.write_text(GOOD.replace("iterations = 10", "iterations = 2000") + "[optimizer]\nlr = 5\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_run_rejects_bad_flags(good, tmp_path):
    assert main(["run", "--config", str(good), "--seed", "-1", "--out", str(tmp_path)]) == 1
    assert main(["run", "--config", str(good), "--jobs", "0", "--out", str(tmp_path)]) == 1


def test_oracle_commands(capsys):
    assert main(["oracle", "list"]) == 0
    assert "determinism" in capsys.readouterr().out
    assert main(["oracle", "delta_k_table"]) == 0
    assert capsys.readouterr().out.startswith("PASS delta_k_table")
    assert main(["oracle", "nonsense"]) == 1


def test_module_entry_point(good):
    res = subprocess.run([sys.executable, "-m", "marigold", "validate", "--config", str(good)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "ok" in res.stdout
