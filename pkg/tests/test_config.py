from __future__ import annotations

import pytest

from mhdshell.config import (
    DEFAULT_CONFIG,
    config_from_overrides,
    config_from_text,
    format_config,
    known_keys,
    parse_config,
    with_ladder,
)
from mhdshell.errors import ConfigError
from mhdshell.ladder import ParameterLadder, halving_sequence, is_power_relation


def test_default_config_parses():
    cfg = config_from_text(DEFAULT_CONFIG)
    assert cfg.eos.gamma == 2.0 and cfg.eos.beta == 4.0
    assert cfg.n_windows == 10
    assert cfg.rho_ref_auto


def test_format_round_trip():
    cfg = config_from_overrides(fluid__nx=48, splitting__xi=0.05, init__recipe="shell-kick")
    again = config_from_text(format_config(cfg))
    assert again.fluid.nx == 48 and again.splitting.xi == 0.05 and again.init.recipe == "shell-kick"
    assert again.config_hash == config_from_text(format_config(cfg)).config_hash


def test_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("fluid.nx = 32  # small\n\nsplitting.dt = 0.005\nsplitting.final_time = 0.01\n")
    cfg = parse_config(path)
    assert cfg.fluid.nx == 32 and cfg.n_windows == 2


@pytest.mark.parametrize(
    "text, fragment",
    [
        ("fluid.nx = 32\nbogus.key = 1\n", "line 2: unknown key"),
        ("fluid.nx = 32\nfluid.nx = 64\n", "line 2: duplicate key"),
        ("fluid.nx\n", "line 1: expected"),
        ("fluid.nx = many\n", "line 1: bad value"),
        ("splitting.delta = 1.5\n", "delta"),
        ("splitting.final_time = 0.015\n", "integer multiple"),
        ("eos.gamma = 1.4\n", "gamma"),
        ("init.recipe = tornado\n", "init.recipe"),
        ("geometry.box_halfwidth = 1.4\n", "box_halfwidth"),
    ],
)
def test_config_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        config_from_text(text)


def test_known_keys_cover_the_default_listing():
    listed = {line.split("=")[0].strip() for line in DEFAULT_CONFIG.splitlines()
              if "=" in line and not line.lstrip().startswith("#")}
    assert listed <= set(known_keys())


def test_config_hash_changes_with_content():
    a = config_from_overrides(fluid__nx=32)
    b = config_from_overrides(fluid__nx=64)
    assert a.config_hash != b.config_hash


def test_with_ladder_replaces_parameters():
    cfg = with_ladder(config_from_overrides(), dt=0.005, xi=0.2)
    assert cfg.splitting.dt == 0.005 and cfg.splitting.xi == 0.2 and cfg.n_windows == 20


def test_ladder_couples_parameters():
    lad = ParameterLadder(dt=0.01, delta=0.01, xi=0.1)
    assert is_power_relation(lad)
    assert lad.omega == lad.zeta == pytest.approx(0.01) and lad.lam == pytest.approx(1e-6)
    assert lad.penalty == pytest.approx(1.0)
    assert lad.eos.delta == 0.01 and lad.eos.xi == 0.1
    assert lad.windows(0.1) == 10
    with pytest.raises(ValueError):
        lad.windows(0.015)
    with pytest.raises(ValueError):
        ParameterLadder(dt=0.01, delta=0.01, xi=0.0)
    assert halving_sequence(0.2, 3) == [0.2, 0.1, 0.05]
