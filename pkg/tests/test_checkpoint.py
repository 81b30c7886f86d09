from __future__ import annotations

import json

import numpy as np
import pytest

from mhdshell.checkpoint import MAGIC, checkpoint_roundtrip, read_checkpoint, restore_simulation, save_states
from mhdshell.errors import CheckpointError
from mhdshell.initial_data import synthesize_initial_data


@pytest.fixture
def states(small_cfg):
    data = synthesize_initial_data(small_cfg(init__recipe="shell-kick"))
    return data.fluid, data.shell


def test_round_trip_is_bit_exact(tmp_path, states):
    fluid, shell = states
    f2, s2 = checkpoint_roundtrip(fluid, shell, tmp_path / "a.ckpt")
    for name in ("rho", "b", "mom", "qth", "theta"):
        assert np.array_equal(getattr(f2, name), getattr(fluid, name))
    assert np.array_equal(s2.v, shell.v) and f2.eps_v == fluid.eps_v and f2.grid == fluid.grid


def test_header_layout(tmp_path, states):
    path = save_states(tmp_path / "a.ckpt", *states)
    raw = path.read_bytes()
    assert raw.startswith(MAGIC)
    header = json.loads(raw[len(MAGIC):raw.index(b"\n", len(MAGIC))])
    assert header["byte_order"] == "little" and header["dtype"] == "float64"
    assert [f["name"] for f in header["fields"]][:3] == ["rho", "b", "mom"]


def test_truncated_payload_is_rejected(tmp_path, states):
    path = save_states(tmp_path / "a.ckpt", *states)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError, match="metadata mismatch"):
        read_checkpoint(path)


def test_foreign_byte_order_is_rejected(tmp_path, states):
    path = save_states(tmp_path / "a.ckpt", *states)
    raw = path.read_bytes().replace(b'"byte_order": "little"', b'"byte_order": "big"', 1)
    path.write_bytes(raw)
    with pytest.raises(CheckpointError, match="byte order"):
        read_checkpoint(path)


def test_bad_magic_is_rejected(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"hello\n")
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(path)


def test_restore_checks_configuration(tmp_path, small_cfg, states):
    path = save_states(tmp_path / "a.ckpt", *states, ladder={"dt": 0.01, "xi": 0.1, "delta": 0.01})
    restore_simulation(small_cfg(), path)
    with pytest.raises(CheckpointError, match="ladder"):
        restore_simulation(small_cfg(splitting__xi=0.2), path)
    with pytest.raises(CheckpointError, match="grid"):
        restore_simulation(small_cfg(fluid__nx=40), path)
