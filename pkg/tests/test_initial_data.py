from __future__ import annotations

import numpy as np
import pytest

from mhdshell.config import RECIPES
from mhdshell.errors import RecipeError
from mhdshell.geometry import inside
from mhdshell.initial_data import smooth_indicator, synthesize_initial_data


def test_smooth_indicator():
    r = np.array([0.0, 0.5, 0.75, 1.0, 2.0])
    vals = smooth_indicator(r, 1.0, 0.5)
    assert vals[0] == 1.0 and vals[1] == 1.0 and vals[2] == 0.5 and vals[3] == 0.0 and vals[4] == 0.0


@pytest.mark.parametrize("recipe", RECIPES)
def test_recipes_are_admissible(small_cfg, recipe):
    cfg = small_cfg(init__recipe=recipe)
    data = synthesize_initial_data(cfg)
    f = data.fluid
    assert f.rho.min() >= 0.0 and f.b.min() >= 0.0
    assert np.all(f.theta[f.rho > 0] > 0.0)
    assert np.all(f.mom[:, f.rho <= 0.0] == 0.0)
    assert np.all(f.mom[:, data.grid.boundary_mask] == 0.0)
    if recipe != "equilibrium":
        assert np.all(inside(0.0, data.grid.points[f.rho > 0], data.shell, cfg.geometry))
    w = data.shell.w
    assert np.all((w > cfg.geometry.alpha) & (w < cfg.geometry.beta))


def test_shell_kick_velocity(small_cfg):
    data = synthesize_initial_data(small_cfg(init__recipe="shell-kick", init__epsilon=0.2))
    y = np.arange(data.shell.n) / data.shell.n
    assert np.allclose(data.shell.v, 0.2 * np.sin(2 * np.pi * y))


def test_rho_ref_auto_is_mean_density(small_cfg):
    data = synthesize_initial_data(small_cfg(init__recipe="shell-kick", init__rho=0.3))
    assert np.isclose(data.ladder.eos.rho_ref, 0.3)


def test_support_too_wide_is_rejected(small_cfg):
    with pytest.raises(RecipeError, match="vacuum"):
        synthesize_initial_data(small_cfg(init__support=0.95))
