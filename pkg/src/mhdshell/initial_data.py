"""Admissible initial data for the coupled system.

Every recipe produces ``rho_0, b_0 >= 0`` vanishing outside the initial
domain, a positive fluid temperature, momentum that vanishes wherever the
density does, and shell data strictly inside the displacement bounds.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from .config import RunConfig
from .errors import RecipeError
from .fluid import Coefficients, FluidState, make_state
from .geometry import Grid, InterfaceMarkers, coefficient_fields, inside
from .ladder import ParameterLadder
from .shell import ShellState

logger = logging.getLogger(__name__)


class InitialData(NamedTuple):
    """Initial states together with the ladder and grid they were built for."""

    fluid: FluidState
    shell: ShellState
    ladder: ParameterLadder
    grid: Grid
    coeffs: Coefficients


def smooth_indicator(r: np.ndarray, outer: float, ramp: float) -> np.ndarray:
    """``C^1`` radial indicator: one for ``r <= outer - ramp``, zero for ``r >= outer``."""
    s = np.clip((outer - r) / ramp, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


def _gaussian(points: np.ndarray, cx: float, cy: float, width: float) -> np.ndarray:
    d2 = (points[..., 0] - cx) ** 2 + (points[..., 1] - cy) ** 2
    return np.exp(-0.5 * d2 / width**2)


def _shell_velocity(cfg: RunConfig) -> np.ndarray:
    ini = cfg.init
    y = np.arange(cfg.shell.n_nodes) / cfg.shell.n_nodes
    if ini.recipe == "shell-kick":
        return ini.epsilon * np.sin(2.0 * np.pi * ini.mode * y)
    if ini.recipe == "collapse":
        return np.full_like(y, -ini.collapse_speed)
    return np.zeros_like(y)


def bump_support(cfg: RunConfig, grid: Grid) -> float:
    """Outer radius of the bump support, checked against the vacuum band.

    Raises:
        RecipeError: If the support does not leave ``band_cells`` empty cells
            (at least two) inside the initial interface.
    """
    ini = cfg.init
    outer = ini.support * cfg.geometry.radius
    band = max(ini.band_cells, 2.0) * grid.h
    if outer > cfg.geometry.radius - band:
        raise RecipeError(
            f"density support radius {outer:.4g} leaves less than {band / grid.h:.3g} "
            f"vacuum cells before the interface at {cfg.geometry.radius:.4g}"
        )
    if outer <= 2.0 * grid.h:
        raise RecipeError("density support is narrower than two cells")
    return outer


def synthesize_initial_data(cfg: RunConfig) -> InitialData:
    """Build the initial fluid and shell states of ``cfg.init.recipe``.

    Recipes:
        ``equilibrium``: uniform density, field and temperature on the whole
        box, zero velocity, flat shell at rest.  Without radiation
        (``a = 0``) it is a steady state up to the uniform cooling by the
        sink; with radiation the jump of the radiation weight across the
        interface sets up a small pressure difference there.
        ``density-bump``: Gaussian density bump on a smooth plateau and a
        uniform field on the same support.
        ``magnetic-bump``: same with the roles of density and field swapped.
        ``shell-kick``: flat shell with normal velocity
        ``epsilon sin(2 pi mode y)``, uniform fluid filling the initial domain
        with the compatible velocity ``v_0(y) n (r / R0)``.
        ``collapse``: uniform inward shell speed with bump fluid, driving the
        shell into its displacement bound.

    Raises:
        RecipeError: If the recipe cannot satisfy the admissibility conditions.
    """
    ini = cfg.init
    geo = cfg.geometry
    ladder = ParameterLadder.from_config(cfg)
    grid = Grid(cfg.fluid.nx, geo.box_halfwidth)
    n = grid.n
    pts = grid.points
    r = np.hypot(pts[..., 0], pts[..., 1])
    v0 = _shell_velocity(cfg)
    shell = ShellState(np.zeros(cfg.shell.n_nodes), v0, np.full(cfg.shell.n_nodes, ini.shell_theta))
    g, h, f = coefficient_fields(0.0, grid, shell, ladder.omega, ladder.zeta, ladder.lam, geo)
    coeffs = Coefficients(g, h, f)
    mom = np.zeros((2, n, n))

    if ini.recipe == "equilibrium":
        rho = np.full((n, n), ini.rho)
        b = np.full((n, n), ini.b)
    elif ini.recipe in ("density-bump", "magnetic-bump", "collapse"):
        outer = bump_support(cfg, grid)
        mask = smooth_indicator(r, outer, 0.25 * outer)
        bump = 1.0 + ini.amplitude * _gaussian(pts, ini.center_x, ini.center_y, ini.width)
        if ini.recipe == "magnetic-bump":
            rho = ini.rho * mask
            b = ini.b * bump * mask
        else:
            rho = ini.rho * bump * mask
            b = ini.b * mask
    elif ini.recipe == "shell-kick":
        ins = inside(0.0, pts, shell, geo)
        rho = np.where(ins, ini.rho, 0.0)
        b = np.where(ins, ini.b, 0.0)
        y = np.mod(np.arctan2(pts[..., 1], pts[..., 0]) / (2.0 * np.pi), 1.0)
        speed = ini.epsilon * np.sin(2.0 * np.pi * ini.mode * y) * r / geo.radius
        radial = pts / np.where(r > 0.0, r, 1.0)[..., None]
        mom = np.moveaxis(rho[..., None] * speed[..., None] * radial, -1, 0)
    else:  # validated by the configuration, kept as a guard
        raise RecipeError(f"unknown recipe {ini.recipe!r}")

    if ini.recipe != "equilibrium" and ini.rho > 0.0 and not np.all(inside(0.0, pts[rho > 0.0], shell, geo)):
        raise RecipeError("initial density is not supported inside the initial domain")
    mom[:, grid.boundary_mask] = 0.0
    mom[:, rho <= 0.0] = 0.0
    peak = float(rho.max(initial=0.0))
    eps_v = cfg.fluid.eps_vacuum * (peak if peak > 0.0 else 1.0)
    eos = ladder.eos
    if cfg.rho_ref_auto and peak > 0.0:
        area = float(np.count_nonzero(rho > 0.0)) * grid.h**2
        mean = float(np.sum(rho)) * grid.h**2 / area
        ladder = ParameterLadder(ladder.dt, ladder.delta, ladder.xi, eos.with_(rho_ref=mean),
                                 ladder.alpha1, ladder.alpha2)
    fluid = make_state(rho, b, mom, ini.theta, coeffs, ladder.eos, grid, eps_v)
    logger.info("initial data %s: mass %.6g, peak density %.4g", ini.recipe,
                float(rho.sum()) * grid.h**2, peak)
    return InitialData(fluid, shell, ladder, grid, coeffs)


def default_markers(cfg: RunConfig) -> InterfaceMarkers:
    """Interface markers of a configuration."""
    return InterfaceMarkers(cfg.n_markers, cfg.geometry.radius)
