"""Run configuration: flat ``key = value`` files with typed, validated keys.

Lines are ``section.key = value``; ``#`` starts a comment and blank lines are
ignored.  Every key has a default, so an empty file is a valid configuration.
Unknown keys, malformed lines and invariant violations raise
:class:`~mhdshell.errors.ConfigError` with the offending line number or the
violated invariant.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from .constitutive import EosParams
from .errors import ConfigError
from .fluid import FluidSettings
from .geometry import GeometryConfig

logger = logging.getLogger(__name__)

RECIPES = ("equilibrium", "density-bump", "magnetic-bump", "shell-kick", "collapse")


@dataclass(frozen=True)
class ShellSettings:
    """Shell discretisation and material constants.

    Attributes:
        n_nodes: Number of torus nodes ``N_s``.
        alpha1: Structural damping.
        alpha2: Rotational inertia.
        substeps: Backward-Euler substeps ``J`` per window.
        theta_weight: Weight of ``||theta||^2`` in the structure energy.
        traction_forcing: Also force the shell with the sampled fluid traction
            and heat flux (held fixed over each window).  Off by default, in
            which case fluid and shell interact through the penalty only.
    """

    n_nodes: int = 256
    alpha1: float = 0.1
    alpha2: float = 0.01
    substeps: int = 4
    theta_weight: float = 1.0
    traction_forcing: bool = False


@dataclass(frozen=True)
class SplittingSettings:
    """Window length, ladder parameters and run length.

    Attributes:
        dt: Window length ``Dt``.
        delta: Penalty and artificial-pressure weight.
        xi: Master small parameter of the extension ladder.
        final_time: Final time ``T``; must be an integer multiple of ``dt``.
        max_steps: Optional cap on the number of fluid substeps (0 disables).
    """

    dt: float = 0.01
    delta: float = 0.01
    xi: float = 0.1
    final_time: float = 0.1
    max_steps: int = 0


@dataclass(frozen=True)
class InitSettings:
    """Initial-data recipe and its parameters.

    Attributes:
        recipe: One of ``equilibrium``, ``density-bump``, ``magnetic-bump``,
            ``shell-kick`` or ``collapse``.
        rho: Density level.
        theta: Fluid temperature, constant on the whole box.
        b: Magnetic field level.
        amplitude: Relative amplitude of the Gaussian bump.
        width: Standard deviation of the Gaussian bump.
        center_x: Bump centre, x coordinate.
        center_y: Bump centre, y coordinate.
        support: Outer radius of the density support as a fraction of ``R0``.
        band_cells: Minimum vacuum band (cells) between support and interface.
        epsilon: Shell velocity amplitude of the kick.
        mode: Fourier mode of the kick.
        shell_theta: Initial shell temperature.
        collapse_speed: Inward shell speed of the collapse recipe.
    """

    recipe: str = "density-bump"
    rho: float = 1.0
    theta: float = 1.0
    b: float = 0.5
    amplitude: float = 0.5
    width: float = 0.15
    center_x: float = 0.2
    center_y: float = 0.0
    support: float = 0.8
    band_cells: float = 3.0
    epsilon: float = 0.1
    mode: int = 1
    shell_theta: float = 1.0
    collapse_speed: float = 5.0


@dataclass(frozen=True)
class RunConfig:
    """Complete, validated run configuration."""

    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    eos: EosParams = field(default_factory=EosParams)
    rho_ref_auto: bool = True
    shell: ShellSettings = field(default_factory=ShellSettings)
    fluid: FluidSettings = field(default_factory=FluidSettings)
    splitting: SplittingSettings = field(default_factory=SplittingSettings)
    init: InitSettings = field(default_factory=InitSettings)
    leak_band_cells: float = 4.0
    seed: int = 0
    source_text: str = ""

    @property
    def n_windows(self) -> int:
        """Number of windows ``T / Dt``."""
        return int(round(self.splitting.final_time / self.splitting.dt))

    @property
    def n_markers(self) -> int:
        """Number of interface markers."""
        return self.fluid.markers or self.shell.n_nodes

    @property
    def config_hash(self) -> str:
        """SHA-256 of the canonical key listing."""
        return hashlib.sha256(format_config(self).encode("utf-8")).hexdigest()

    def validate(self) -> "RunConfig":
        """Check cross-section invariants; returns ``self`` for chaining."""
        sp = self.splitting
        if not sp.dt > 0.0:
            raise ConfigError("splitting.dt must be positive")
        if not 0.0 < sp.delta < 1.0:
            raise ConfigError(f"delta must satisfy 0 < delta < 1, got {sp.delta}")
        if not 0.0 < sp.xi <= 1.0:
            raise ConfigError(f"xi must satisfy 0 < xi <= 1, got {sp.xi}")
        if sp.final_time < 0.0:
            raise ConfigError("splitting.final_time must be nonnegative")
        ratio = sp.final_time / sp.dt
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigError("splitting.final_time must be an integer multiple of splitting.dt")
        if sp.max_steps < 0:
            raise ConfigError("splitting.max_steps must be nonnegative")
        sh = self.shell
        if sh.n_nodes < 4 or sh.substeps < 1:
            raise ConfigError("shell.n_nodes >= 4 and shell.substeps >= 1 required")
        if sh.alpha1 < 0.0 or sh.alpha2 < 0.0:
            raise ConfigError("shell.alpha1 and shell.alpha2 must be nonnegative")
        fl = self.fluid
        if fl.nx < 8:
            raise ConfigError("fluid.nx must be at least 8")
        if not 0.0 < fl.cfl <= 1.0:
            raise ConfigError("fluid.cfl must lie in (0, 1]")
        if not fl.eps_vacuum > 0.0:
            raise ConfigError("fluid.eps_vacuum must be positive")
        if fl.kernel_halfwidth < 1.0:
            raise ConfigError("fluid.kernel_halfwidth must be at least one cell")
        h = 2.0 * self.geometry.box_halfwidth / fl.nx
        self.geometry.check_box((fl.kernel_halfwidth + 1.0) * h)
        ini = self.init
        if ini.recipe not in RECIPES:
            raise ConfigError(f"init.recipe must be one of {', '.join(RECIPES)}")
        if ini.rho < 0.0 or ini.b < 0.0:
            raise ConfigError("initial density and magnetic field must be nonnegative")
        if ini.recipe != "equilibrium" and not ini.theta > 0.0:
            raise ConfigError("initial fluid temperature must be positive")
        if ini.shell_theta < 0.0:
            raise ConfigError("initial shell temperature must be nonnegative")
        return self


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float(text: str) -> float:
    val = float(text)
    if math.isnan(val):
        raise ValueError("NaN is not allowed")
    return val


def _int(text: str) -> int:
    val = float(text)
    if val != int(val):
        raise ValueError(f"not an integer: {text!r}")
    return int(val)


def _optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none", "auto") else _int(text)


# key -> (section attribute, field name, parser)
_KEYS: dict[str, tuple[str, str, Callable[[str], Any]]] = {
    "geometry.radius": ("geometry", "radius", _float),
    "geometry.cutoff.m2": ("geometry", "m2", _float),
    "geometry.cutoff.m1": ("geometry", "m1", _float),
    "geometry.cutoff.M1": ("geometry", "M1", _float),
    "geometry.cutoff.M2": ("geometry", "M2", _float),
    "geometry.bounds.alpha": ("geometry", "alpha", _float),
    "geometry.bounds.beta": ("geometry", "beta", _float),
    "geometry.box_halfwidth": ("geometry", "box_halfwidth", _float),
    "eos.gamma": ("eos", "gamma", _float),
    "eos.a": ("eos", "a", _float),
    "eos.beta": ("eos", "beta", _float),
    "eos.mu_bar": ("eos", "mu_bar", _float),
    "eos.eta_bar": ("eos", "eta_bar", _float),
    "eos.kappa_bar": ("eos", "kappa_bar", _float),
    "eos.rho_ref": ("eos", "rho_ref", str),
    "eos.theta_ref": ("eos", "theta_ref", _float),
    "shell.n_nodes": ("shell", "n_nodes", _int),
    "shell.alpha1": ("shell", "alpha1", _float),
    "shell.alpha2": ("shell", "alpha2", _float),
    "shell.substeps": ("shell", "substeps", _int),
    "shell.theta_weight": ("shell", "theta_weight", _float),
    "shell.traction_forcing": ("shell", "traction_forcing", _bool),
    "fluid.nx": ("fluid", "nx", _int),
    "fluid.cfl": ("fluid", "cfl", _float),
    "fluid.eps_vacuum": ("fluid", "eps_vacuum", _float),
    "fluid.kernel_halfwidth": ("fluid", "kernel_halfwidth", _float),
    "fluid.markers": ("fluid", "markers", _optional_int),
    "fluid.active_fraction": ("fluid", "active_fraction", _float),
    "splitting.dt": ("splitting", "dt", _float),
    "splitting.delta": ("splitting", "delta", _float),
    "splitting.xi": ("splitting", "xi", _float),
    "splitting.final_time": ("splitting", "final_time", _float),
    "splitting.max_steps": ("splitting", "max_steps", _int),
    "init.recipe": ("init", "recipe", lambda s: s.strip()),
    "init.rho": ("init", "rho", _float),
    "init.theta": ("init", "theta", _float),
    "init.b": ("init", "b", _float),
    "init.amplitude": ("init", "amplitude", _float),
    "init.width": ("init", "width", _float),
    "init.center_x": ("init", "center_x", _float),
    "init.center_y": ("init", "center_y", _float),
    "init.support": ("init", "support", _float),
    "init.band_cells": ("init", "band_cells", _float),
    "init.epsilon": ("init", "epsilon", _float),
    "init.mode": ("init", "mode", _int),
    "init.shell_theta": ("init", "shell_theta", _float),
    "init.collapse_speed": ("init", "collapse_speed", _float),
    "diagnostics.leak_band_cells": ("", "leak_band_cells", _float),
    "run.seed": ("", "seed", _int),
}


def known_keys() -> tuple[str, ...]:
    """All accepted configuration keys."""
    return tuple(_KEYS)


def parse_lines(text: str) -> dict[str, tuple[int, str]]:
    """Split configuration text into ``key -> (line number, raw value)``.

    Raises:
        ConfigError: On malformed lines, unknown keys or duplicates.
    """
    out: dict[str, tuple[int, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: missing key")
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = (lineno, value)
    return out


def config_from_text(text: str) -> RunConfig:
    """Build and validate a configuration from file contents."""
    entries = parse_lines(text)
    sections: dict[str, dict[str, Any]] = {"geometry": {}, "eos": {}, "shell": {}, "fluid": {},
                                           "splitting": {}, "init": {}, "": {}}
    for key, (lineno, value) in entries.items():
        section, name, parser = _KEYS[key]
        try:
            sections[section][name] = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return config_from_sections(sections, source_text=text)


def config_from_sections(sections: dict[str, dict[str, Any]], source_text: str = "") -> RunConfig:
    """Build a configuration from per-section overrides (already typed)."""
    eos_kw = dict(sections.get("eos", {}))
    rho_ref = eos_kw.pop("rho_ref", "auto")
    auto = isinstance(rho_ref, str) and rho_ref.strip().lower() == "auto"
    if not auto:
        try:
            eos_kw["rho_ref"] = float(rho_ref)
        except ValueError:
            raise ConfigError("eos.rho_ref must be a number or 'auto'") from None
    top = dict(sections.get("", {}))
    cfg = RunConfig(
        geometry=GeometryConfig(**sections.get("geometry", {})),
        eos=EosParams(**eos_kw),
        rho_ref_auto=auto,
        shell=ShellSettings(**sections.get("shell", {})),
        fluid=FluidSettings(**sections.get("fluid", {})),
        splitting=SplittingSettings(**sections.get("splitting", {})),
        init=InitSettings(**sections.get("init", {})),
        source_text=source_text,
        **top,
    )
    return cfg.validate()


def config_from_overrides(**overrides: Any) -> RunConfig:
    """Build a configuration from ``section__field=value`` keyword overrides.

    Example:
        ``config_from_overrides(fluid__nx=32, splitting__dt=0.005)``
    """
    sections: dict[str, dict[str, Any]] = {}
    for name, value in overrides.items():
        section, _, fld = name.partition("__")
        if not fld:
            section, fld = "", section
        sections.setdefault(section, {})[fld] = value
    return config_from_sections(sections)


def parse_config(path: str | Path) -> RunConfig:
    """Read and validate a configuration file.

    Raises:
        ConfigError: With a line number for syntax errors, or naming the
            violated invariant.
    """
    text = Path(path).read_text(encoding="utf-8")
    return config_from_text(text)


def with_ladder(cfg: RunConfig, dt: float | None = None, xi: float | None = None,
                delta: float | None = None, final_time: float | None = None) -> RunConfig:
    """Copy of ``cfg`` with some splitting parameters replaced."""
    changes = {k: v for k, v in (("dt", dt), ("xi", xi), ("delta", delta), ("final_time", final_time))
               if v is not None}
    return replace(cfg, splitting=replace(cfg.splitting, **changes)).validate()


def format_config(cfg: RunConfig) -> str:
    """Canonical ``key = value`` listing of every key."""
    lines = []
    for key, (section, name, _) in _KEYS.items():
        obj = cfg if section == "" else getattr(cfg, section)
        if key == "eos.rho_ref" and cfg.rho_ref_auto:
            value: Any = "auto"
        else:
            value = getattr(obj, name)
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines) + "\n"


DEFAULT_CONFIG = """\
# Default run: a density bump relaxing inside a thermoelastic ring.
geometry.radius = 1.0
geometry.cutoff.m2 = -0.48
geometry.cutoff.m1 = -0.02
geometry.cutoff.M1 = 0.02
geometry.cutoff.M2 = 0.48
geometry.bounds.alpha = -0.5
geometry.bounds.beta = 0.5
geometry.box_halfwidth = 2.0

eos.gamma = 2.0
eos.beta = 4.0
eos.a = 1.0
eos.mu_bar = 1.0
eos.eta_bar = 1.0
eos.kappa_bar = 1.0
eos.rho_ref = auto
eos.theta_ref = 1.0

shell.n_nodes = 256
shell.alpha1 = 0.1
shell.alpha2 = 0.01
shell.substeps = 4

fluid.nx = 128
fluid.cfl = 0.4
fluid.eps_vacuum = 1e-8
fluid.kernel_halfwidth = 2.0

splitting.dt = 0.01
splitting.delta = 0.01
splitting.xi = 0.1
splitting.final_time = 0.1

init.recipe = density-bump
"""
