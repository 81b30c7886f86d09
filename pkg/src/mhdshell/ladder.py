"""The ladder of small approximation parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .constitutive import EosParams


@dataclass(frozen=True)
class ParameterLadder:
    """Window length, penalty weight and the coupled extension parameters.

    The exterior viscosity weight ``omega``, conductivity weight ``zeta`` and
    radiation weight ``lam`` are slaved to the master parameter ``xi`` by
    ``omega = zeta = xi^2`` and ``lam = xi^6``.

    Attributes:
        dt: Window length ``Dt``.
        delta: Penalty and artificial-pressure weight in ``(0, 1)``.
        xi: Master small parameter in ``(0, 1]``; also the sink weight.
        eos: Base constitutive parameters (``delta`` and ``xi`` are overridden).
        alpha1: Structural damping.
        alpha2: Rotational inertia.
    """

    dt: float
    delta: float
    xi: float
    eos: EosParams = field(default_factory=EosParams)
    alpha1: float = 0.1
    alpha2: float = 0.01

    def __post_init__(self) -> None:
        if not self.dt > 0.0:
            raise ValueError(f"window length must be positive, got {self.dt}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not 0.0 < self.xi <= 1.0:
            raise ValueError(f"xi must lie in (0, 1], got {self.xi}")
        assert self.omega == self.xi**2 and self.zeta == self.xi**2 and self.lam == self.xi**6
        object.__setattr__(self, "eos", self.eos.with_(delta=self.delta, xi=self.xi))

    @property
    def omega(self) -> float:
        """Exterior viscosity weight ``xi^2``."""
        return self.xi**2

    @property
    def zeta(self) -> float:
        """Exterior conductivity weight ``xi^2``."""
        return self.xi**2

    @property
    def lam(self) -> float:
        """Exterior radiation weight ``xi^6``."""
        return self.xi**6

    @property
    def penalty(self) -> float:
        """Penalty strength ``delta / Dt``."""
        return self.delta / self.dt

    def windows(self, final_time: float) -> int:
        """Number of windows covering ``[0, final_time]``.

        Raises:
            ValueError: If ``final_time`` is not an integer multiple of ``dt``.
        """
        ratio = final_time / self.dt
        n = int(round(ratio))
        if abs(ratio - n) > 1e-9 * max(1.0, ratio) or n < 0:
            raise ValueError(f"final time {final_time} is not a multiple of the window {self.dt}")
        return n

    @classmethod
    def from_config(cls, cfg) -> "ParameterLadder":
        """Ladder of a :class:`~mhdshell.config.RunConfig`."""
        sp = cfg.splitting
        return cls(dt=sp.dt, delta=sp.delta, xi=sp.xi, eos=cfg.eos,
                   alpha1=cfg.shell.alpha1, alpha2=cfg.shell.alpha2)

    def describe(self) -> dict[str, float]:
        """Plain mapping of every parameter, for checkpoint headers."""
        return {"dt": self.dt, "delta": self.delta, "xi": self.xi, "omega": self.omega,
                "zeta": self.zeta, "lambda": self.lam, "alpha1": self.alpha1, "alpha2": self.alpha2}


def halving_sequence(start: float, count: int) -> list[float]:
    """``[start, start/2, ..., start/2^(count-1)]``."""
    return [start / 2.0**k for k in range(count)]


def is_power_relation(ladder: ParameterLadder) -> bool:
    """True if ``xi = omega^(1/2) = zeta^(1/2) = lam^(1/6)`` to rounding."""
    x = ladder.xi
    return all(math.isclose(v, x, rel_tol=1e-12) for v in (ladder.omega**0.5, ladder.zeta**0.5, ladder.lam ** (1 / 6)))
