from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhdshell.constitutive import EosParams
from mhdshell.errors import CFLError, NaNGuardError
from mhdshell.fluid import (
    Coefficients,
    bilinear_sample,
    cfl_dt,
    conduction_divergence,
    conduction_faces,
    conduction_matrix,
    divergence,
    entropy_production_density,
    exterior_flux_density,
    face_velocities,
    fluid_substep,
    kernel_matrix,
    make_state,
    outflow_rate,
    sample_kernel,
    sink_solve,
    spread_penalty,
    transport_step,
    velocity,
)
from mhdshell.geometry import Grid

EOS = EosParams()


def uniform_state(n=16, rho=1.0, b=0.5, theta=1.0):
    grid = Grid(n, 2.0)
    coeffs = Coefficients.ones(n)
    state = make_state(np.full((n, n), rho), np.full((n, n), b), np.zeros((2, n, n)), theta, coeffs, EOS, grid, 1e-8)
    return state, coeffs


def test_velocity_regularisation():
    assert np.allclose(velocity(np.array([2.0]), np.array([[4.0]]), 1e-8), 2.0)
    assert velocity(np.array([0.0]), np.array([[1.0]]), 1e-8)[0, 0] == 0.0


def test_divergence_of_linear_field():
    grid = Grid(16, 2.0)
    X, Y = grid.centers
    u = np.stack([X, 2 * Y])
    assert np.allclose(divergence(u, grid.h)[1:-1, 1:-1], 3.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), frac=st.floats(0.05, 1.0))
def test_transport_conserves_and_stays_nonnegative(seed, frac):
    rng = np.random.default_rng(seed)
    n = 12
    rho = rng.uniform(0.0, 2.0, (n, n)) * (rng.uniform(size=(n, n)) > 0.4)
    u = rng.normal(size=(2, n, n))
    faces = face_velocities(u)
    h = 0.1
    tau = frac / outflow_rate(faces, h).max()
    new = transport_step(rho, faces, tau, h)
    assert np.isclose(new.sum(), rho.sum(), rtol=1e-14, atol=1e-14)
    assert new.min() >= -1e-15


def test_transport_rejects_cfl_violation():
    u = np.ones((2, 8, 8))
    faces = face_velocities(u)
    with pytest.raises(CFLError):
        transport_step(np.ones((8, 8)), faces, 1.0, 0.1)


def test_kernel_rows_sum_to_one_and_reproduce_linear_fields():
    grid = Grid(32, 2.0)
    pts = np.random.default_rng(0).uniform(-1.2, 1.2, (20, 2))
    K = kernel_matrix(pts, grid)
    assert np.allclose(np.asarray(K.sum(axis=1)).ravel(), 1.0)
    X, Y = grid.centers
    field = np.stack([X, 3.0 + 0 * Y])
    assert np.allclose(sample_kernel(field, K)[:, 1], 3.0)
    assert np.allclose(bilinear_sample(X, pts, grid), pts[:, 0], atol=1e-12)


def test_kernel_outside_grid_raises():
    with pytest.raises(ValueError):
        kernel_matrix(np.array([[1.99, 0.0]]), Grid(16, 2.0))


def test_spread_penalty_preserves_total_force():
    grid = Grid(32, 2.0)
    pts = np.random.default_rng(1).uniform(-1.0, 1.0, (10, 2))
    K = kernel_matrix(pts, grid)
    forces = np.random.default_rng(2).normal(size=(10, 2))
    weights = np.full(10, 0.3)
    dens = spread_penalty(forces, K, weights, grid)
    assert np.allclose(dens.sum(axis=(1, 2)) * grid.h**2, (forces * weights[:, None]).sum(axis=0))


def test_conduction_operator_is_conservative_and_symmetric():
    rng = np.random.default_rng(4)
    kappa = rng.uniform(0.1, 2.0, (10, 10))
    faces = conduction_faces(kappa, 0.2)
    L = conduction_matrix(faces, 10)
    assert np.allclose((L - L.T).toarray(), 0.0)
    assert np.allclose(np.asarray(L.sum(axis=0)).ravel(), 0.0)
    theta = rng.uniform(0.5, 1.5, (10, 10))
    assert np.allclose(-(L @ theta.ravel()).reshape(10, 10), conduction_divergence(theta, faces))
    assert np.isclose(conduction_divergence(theta, faces).sum(), 0.0, atol=1e-10)


def test_sink_solve_balances_energy():
    rho = np.array([1.0, 0.0])
    f = np.array([1.0, 1e-6])
    q = np.array([2.0, 1e-7])
    theta = sink_solve(rho, q, f, EOS, xi=0.1, tau=0.5)
    resid = rho * theta + f * theta**4 + 0.5 * 0.1 * theta**5 - q
    assert np.allclose(resid, 0.0, atol=1e-13)


def test_uniform_state_is_steady():
    state, coeffs = uniform_state()
    new, rep = fluid_substep(state, coeffs, EOS, cfl_dt(state, coeffs, EOS), xi=0.0)
    assert np.allclose(new.rho, state.rho) and np.allclose(new.b, state.b)
    assert np.allclose(new.mom, 0.0) and np.allclose(new.theta, state.theta)
    assert rep.dissipation == 0.0 and np.isclose(rep.sink, 0.0, atol=1e-12)


def test_substep_conserves_mass_and_field():
    n = 24
    grid = Grid(n, 2.0)
    X, Y = grid.centers
    rho = 1.0 + 0.5 * np.exp(-(X**2 + Y**2) / 0.2)
    mom = np.stack([0.3 * Y, -0.3 * X]) * rho
    coeffs = Coefficients.ones(n)
    state = make_state(rho, 0.5 * rho, mom, 1.0, coeffs, EOS, grid, 1e-8)
    for _ in range(5):
        state, rep = fluid_substep(state, coeffs, EOS, cfl_dt(state, coeffs, EOS), xi=0.1)
        assert rep.dissipation >= 0.0 and rep.sink >= 0.0
    assert np.isclose(state.rho.sum(), rho.sum(), rtol=1e-13)
    assert np.isclose(state.b.sum(), 0.5 * rho.sum(), rtol=1e-13)
    assert state.rho.min() >= 0.0 and state.theta.min() > 0.0


def test_cfl_guard_on_nan():
    state, coeffs = uniform_state()
    bad = make_state(np.full((16, 16), np.nan), state.b, state.mom, 1.0, coeffs, EOS, state.grid, 1e-8)
    with pytest.raises(NaNGuardError):
        cfl_dt(bad, coeffs, EOS)


def test_production_and_exterior_flux_vanish_at_rest():
    state, coeffs = uniform_state()
    u = state.velocity()
    assert np.all(entropy_production_density(u, state.theta, coeffs, EOS, state.grid.h) == 0.0)
    assert np.all(exterior_flux_density(u, state.theta, coeffs, EOS, state.grid.h) == 0.0)


def test_exterior_flux_scales_with_weights():
    n = 16
    grid = Grid(n, 2.0)
    X, Y = grid.centers
    u = np.stack([Y, X * 0.5])
    theta = 1.0 + 0.1 * X
    full = exterior_flux_density(u, theta, Coefficients.ones(n), EOS, grid.h)
    small = Coefficients(np.full((n, n), 0.01), np.full((n, n), 0.01), np.ones((n, n)))
    assert np.allclose(exterior_flux_density(u, theta, small, EOS, grid.h), 0.01 * full)
