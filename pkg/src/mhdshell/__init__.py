"""Compressible heat-conducting MHD fluid coupled to a thermoelastic shell.

The fluid lives on a fixed Cartesian box that contains every admissible
deformed domain; a periodic shell bounds the physical domain and exchanges
momentum with the fluid through a penalty force.  Time is advanced by
window-wise operator splitting.
"""

from __future__ import annotations

import logging

from .config import RunConfig, config_from_overrides, config_from_text, parse_config
from .errors import (
    CFLError,
    CheckpointError,
    ConfigError,
    DegeneracyError,
    MhdShellError,
    NaNGuardError,
    RecipeError,
)
from .ladder import ParameterLadder
from .splitting import RunReport, Simulation, SweepReport, TimeShiftBuffer, ladder_sweep, run

__version__ = "0.1.0"

logging.getLogger(__name__).addHandler(logging.NullHandler())

__all__ = [
    "CFLError",
    "CheckpointError",
    "ConfigError",
    "DegeneracyError",
    "MhdShellError",
    "NaNGuardError",
    "ParameterLadder",
    "RecipeError",
    "RunConfig",
    "RunReport",
    "Simulation",
    "SweepReport",
    "TimeShiftBuffer",
    "config_from_overrides",
    "config_from_text",
    "ladder_sweep",
    "parse_config",
    "run",
]
