"""Binary checkpoints of the coupled state.

Layout:

1. the magic line ``MHDSHELL-CHECKPOINT 1``;
2. one line of JSON metadata: byte order, dtype, the ordered list of fields
   with their shapes, times, window index, ladder, grid and cumulative
   ledger columns;
3. the payload: each field in the listed order as row-major little-endian
   64-bit floats.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .diagnostics import Cumulative
from .errors import CheckpointError
from .fluid import FluidState
from .geometry import Grid
from .shell import ShellState

logger = logging.getLogger(__name__)

MAGIC = b"MHDSHELL-CHECKPOINT 1\n"
DTYPE = np.dtype("<f8")


class CheckpointData(NamedTuple):
    """Contents of a checkpoint."""

    fluid: FluidState
    shell: ShellState
    trace: np.ndarray
    shell_velocity: np.ndarray
    window: int
    cumulative: Cumulative
    ladder: dict


def _fields(fluid: FluidState, shell: ShellState, trace: np.ndarray, shell_velocity: np.ndarray):
    return [
        ("rho", fluid.rho), ("b", fluid.b), ("mom", fluid.mom), ("qth", fluid.qth), ("theta", fluid.theta),
        ("shell_w", shell.w), ("shell_v", shell.v), ("shell_theta", shell.theta),
        ("buffer_trace", trace), ("buffer_shell_velocity", shell_velocity),
    ]


def save_states(path: str | Path, fluid: FluidState, shell: ShellState, *, trace: np.ndarray | None = None,
                shell_velocity: np.ndarray | None = None, window: int = 0,
                cumulative: Cumulative | None = None, ladder: dict | None = None) -> Path:
    """Write a checkpoint of explicit states."""
    path = Path(path)
    trace = shell.v if trace is None else trace
    shell_velocity = shell.v if shell_velocity is None else shell_velocity
    arrays = _fields(fluid, shell, np.asarray(trace, float), np.asarray(shell_velocity, float))
    header = {
        "byte_order": "little",
        "dtype": "float64",
        "fields": [{"name": n, "shape": list(np.shape(a))} for n, a in arrays],
        "fluid_time": fluid.t,
        "shell_time": shell.t,
        "window": window,
        "grid": {"n": fluid.grid.n, "halfwidth": fluid.grid.halfwidth},
        "eps_v": fluid.eps_v,
        "cumulative": asdict(cumulative or Cumulative()),
        "ladder": ladder or {},
    }
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype=DTYPE).tobytes(order="C"))
    return path


def write_checkpoint(path: str | Path, sim) -> Path:
    """Write the full state of a :class:`~mhdshell.splitting.Simulation`."""
    return save_states(path, sim.fluid, sim.shell, trace=sim.buffer.trace,
                       shell_velocity=sim.buffer.shell_velocity, window=sim.window,
                       cumulative=sim.cumulative, ladder=sim.ladder.describe())


def read_checkpoint(path: str | Path) -> CheckpointData:
    """Read a checkpoint written by :func:`save_states`.

    Raises:
        CheckpointError: On a bad magic line, malformed metadata, a byte order
            or dtype other than little-endian float64, or a payload whose size
            disagrees with the metadata.
    """
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic line)")
    end = raw.find(b"\n", len(MAGIC))
    if end < 0:
        raise CheckpointError("metadata mismatch: header line is truncated")
    try:
        header = json.loads(raw[len(MAGIC):end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"metadata mismatch: unreadable header ({exc})") from None
    if header.get("byte_order") != "little":
        raise CheckpointError(f"metadata mismatch: byte order {header.get('byte_order')!r} is not supported")
    if header.get("dtype") != "float64":
        raise CheckpointError(f"metadata mismatch: dtype {header.get('dtype')!r} is not supported")
    payload = memoryview(raw)[end + 1:]
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for spec in header["fields"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * DTYPE.itemsize
        if offset + nbytes > len(payload):
            raise CheckpointError(f"metadata mismatch: payload truncated in field {spec['name']!r}")
        arrays[spec["name"]] = np.frombuffer(payload[offset:offset + nbytes], dtype=DTYPE).reshape(shape).astype(float)
        offset += nbytes
    if offset != len(payload):
        raise CheckpointError(f"metadata mismatch: {len(payload) - offset} trailing payload bytes")
    grid = Grid(int(header["grid"]["n"]), float(header["grid"]["halfwidth"]))
    fluid = FluidState(rho=arrays["rho"], b=arrays["b"], mom=arrays["mom"], qth=arrays["qth"],
                       theta=arrays["theta"], t=float(header["fluid_time"]), grid=grid,
                       eps_v=float(header["eps_v"]))
    shell = ShellState(arrays["shell_w"], arrays["shell_v"], arrays["shell_theta"], float(header["shell_time"]))
    return CheckpointData(fluid, shell, arrays["buffer_trace"], arrays["buffer_shell_velocity"],
                          int(header["window"]), Cumulative(**header["cumulative"]), header["ladder"])


def checkpoint_roundtrip(fluid: FluidState, shell: ShellState, path: str | Path) -> tuple[FluidState, ShellState]:
    """Write then read back a pair of states."""
    save_states(path, fluid, shell)
    data = read_checkpoint(path)
    return data.fluid, data.shell


def restore_simulation(cfg, path: str | Path):
    """Rebuild a :class:`~mhdshell.splitting.Simulation` from a checkpoint.

    Raises:
        CheckpointError: If the checkpoint grid or ladder disagrees with ``cfg``.
    """
    from .ladder import ParameterLadder
    from .splitting import Simulation, TimeShiftBuffer

    data = read_checkpoint(path)
    if data.fluid.grid.n != cfg.fluid.nx or data.shell.n != cfg.shell.n_nodes:
        raise CheckpointError("metadata mismatch: checkpoint grid differs from the configuration")
    ladder = ParameterLadder.from_config(cfg)
    stored = data.ladder
    if stored and (stored.get("dt") != ladder.dt or stored.get("xi") != ladder.xi or stored.get("delta") != ladder.delta):
        raise CheckpointError("metadata mismatch: checkpoint ladder differs from the configuration")
    buffer = TimeShiftBuffer(data.trace, data.shell_velocity, data.window - 1)
    return Simulation(cfg, data.fluid, data.shell, ladder, buffer, data.window, data.cumulative)
