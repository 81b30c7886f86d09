from __future__ import annotations

from mhdshell.cli import main, worker_count
from mhdshell.config import format_config

from conftest import small_config


def write_config(tmp_path, **overrides):
    path = tmp_path / "run.cfg"
    path.write_text(format_config(small_config(**overrides)))
    return path


def test_default_config_prints(capsys):
    assert main(["default-config"]) == 0
    assert "splitting.dt" in capsys.readouterr().out


def test_validate_passes(capsys):
    assert main(["validate", "--seed", "3"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4 and "FAIL" not in out


def test_run_and_restart(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert "halt: completed" in capsys.readouterr().out
    assert (tmp_path / "out" / "ledger.csv").exists()
    again = ["run", "--config", str(cfg), "--out", str(tmp_path / "again"),
             "--restart", str(tmp_path / "out" / "final.ckpt")]
    assert main(again) == 0


def test_bad_config_exits_with_two(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("fluid.nx = 32\nnot.a.key = 3\n")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_missing_checkpoint_exits_with_one(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--restart", str(tmp_path / "none")]) == 1


def test_sweep(tmp_path, capsys):
    cfg = write_config(tmp_path)
    manifest = tmp_path / "ladder.txt"
    manifest.write_text("dt=0.01 xi=0.1\ndt=0.005 xi=0.1\n")
    assert main(["sweep", "--config", str(cfg), "--manifest", str(manifest), "--out", str(tmp_path / "s")]) == 0
    assert "slopes:" in capsys.readouterr().out
    manifest.write_text("dt=0.01\n")
    assert main(["sweep", "--config", str(cfg), "--manifest", str(manifest), "--out", str(tmp_path / "s")]) == 2


def test_thread_variable(monkeypatch):
    monkeypatch.delenv("MHDSHELL_THREADS", raising=False)
    assert worker_count() == 1
    monkeypatch.setenv("MHDSHELL_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("MHDSHELL_THREADS", "zero")
    assert main(["default-config"]) == 0
    import pytest

    from mhdshell.errors import ConfigError

    with pytest.raises(ConfigError):
        worker_count()
