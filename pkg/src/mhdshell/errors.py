"""Exception types raised by the solver modules."""

from __future__ import annotations


class MhdShellError(Exception):
    """Base class for every error raised by this package."""


class DegeneratePointError(MhdShellError, ValueError):
    """A geometric quantity is undefined at the requested point."""


class InverseMapError(MhdShellError, RuntimeError):
    """Newton iteration for the inverse flow map failed to converge."""


class DegeneracyError(MhdShellError, RuntimeError):
    """The shell left the admissible displacement range or the map folded.

    Args:
        message: Description of the cause.
        time: Time at which degeneracy was detected, if known.
    """

    def __init__(self, message: str = "", time: float | None = None) -> None:
        super().__init__(message)
        self.time = time


class VacuumError(MhdShellError, ValueError):
    """A specific (per unit mass) quantity was requested at zero density."""


class ThermoDomainError(MhdShellError, ValueError):
    """A thermodynamic function was evaluated outside its domain."""


class CFLError(MhdShellError, RuntimeError):
    """A time step violates the stability restriction of a substep."""


class NaNGuardError(MhdShellError, FloatingPointError):
    """A non-finite value appeared in the evolving state."""


class ConfigError(MhdShellError, ValueError):
    """The run configuration is malformed or violates an invariant."""


class CheckpointError(MhdShellError, IOError):
    """A checkpoint file could not be parsed or does not match its header."""


class RecipeError(MhdShellError, ValueError):
    """An initial-data recipe cannot be realised for the given settings."""
