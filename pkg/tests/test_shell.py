from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from mhdshell.errors import DegeneracyError
from mhdshell.shell import (
    ShellForcing,
    ShellState,
    laplacian_symbol,
    mode_matrix,
    penalty_work,
    shell_dissipation_rate,
    shell_energy,
    shell_step,
    spectral_gradient,
    spectral_laplacian,
)

N = 16
Y = np.arange(N) / N
DELTA, A1, A2, DT = 0.01, 0.1, 0.01, 0.01


def mode_state(k, w0=0.01, v0=0.0, th0=0.01):
    c = np.cos(2 * np.pi * k * Y)
    return ShellState(w0 * c, v0 * c, th0 * c)


def test_spectral_operators_on_cosine():
    c = np.cos(2 * np.pi * 3 * Y)
    assert np.allclose(spectral_laplacian(c), laplacian_symbol(3) * c, atol=1e-9)
    assert np.allclose(spectral_gradient(c), -6 * np.pi * np.sin(2 * np.pi * 3 * Y), atol=1e-9)


def test_shell_state_is_read_only_and_checked():
    s = ShellState.zeros(8)
    with pytest.raises(ValueError):
        s.w[0] = 1.0
    with pytest.raises(ValueError):
        ShellState(np.zeros(4), np.zeros(5), np.zeros(4))


def test_energy_of_single_mode():
    k = 2
    s = mode_state(k, w0=0.1, v0=0.2, th0=0.3)
    e = shell_energy(s, A2, theta_weight=0.5)
    lam = (2 * np.pi * k) ** 2
    # ||cos||^2 = 1/2 on the unit torus.
    assert np.isclose(e.kinetic, 0.5 * 0.04 * 0.5)
    assert np.isclose(e.bending, 0.5 * lam**2 * 0.01 * 0.5)
    assert np.isclose(e.inertial_gradient, 0.5 * A2 * lam * 0.04 * 0.5)
    assert np.isclose(e.thermal, 0.5 * 0.09 * 0.5)
    assert np.isclose(shell_dissipation_rate(s, A1), A1 * lam * 0.04 * 0.5 + lam * 0.09 * 0.5)


@pytest.mark.parametrize("k", [1, 3])
def test_backward_euler_converges_to_matrix_exponential(k):
    A = mode_matrix(k, DELTA, A1, A2, penalty=DELTA / DT)
    T = 1e-3
    errs = []
    for steps in (200, 400):
        s = mode_state(k)
        for _ in range(steps):
            s = shell_step(s, ShellForcing.zeros(N), T / steps, DT, DELTA, A1, A2)
        x = expm(A * T) @ np.array([0.01, 0.0, 0.01])
        ref = np.stack([x[0], x[1], x[2]])[:, None] * np.cos(2 * np.pi * k * Y)
        errs.append(np.linalg.norm(np.stack([s.w, s.v, s.theta]) - ref) / np.linalg.norm(ref))
    assert errs[1] < errs[0]
    assert np.isclose(errs[0] / errs[1], 2.0, rtol=0.1)


@settings(max_examples=25, deadline=None)
@given(
    w=st.lists(st.floats(-0.1, 0.1), min_size=N, max_size=N),
    v=st.lists(st.floats(-1.0, 1.0), min_size=N, max_size=N),
    th=st.lists(st.floats(-1.0, 1.0), min_size=N, max_size=N),
    tau=st.floats(1e-5, DT),
)
def test_free_step_dissipates_natural_energy(w, v, th, tau):
    s = ShellState(np.array(w), np.array(v), np.array(th))

    def energy(state):
        e = shell_energy(state, A2, theta_weight=0.5)
        return (1 - DELTA) * e.kinetic + e.bending + e.inertial_gradient + e.thermal

    new = shell_step(s, ShellForcing.zeros(N), tau, DT, DELTA, A1, A2)
    assert energy(new) <= energy(s) * (1 + 1e-12) + 1e-14


def test_penalty_work_identity():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=20), rng.normal(size=20)
    lhs, rhs = penalty_work(a, b, 0.02, 0.005)
    assert np.isclose(lhs, rhs)


def test_penalty_pulls_toward_target():
    s = ShellState.zeros(N)
    target = 0.5 * np.cos(2 * np.pi * Y)
    new = shell_step(s, ShellForcing(np.zeros(N), np.zeros(N), target), DT, DT, 0.5, A1, A2)
    assert np.dot(new.v, target) > 0.0


def test_step_leaving_bounds_raises_degeneracy():
    s = ShellState(np.full(N, -0.45), np.full(N, -10.0), np.zeros(N))
    with pytest.raises(DegeneracyError):
        shell_step(s, ShellForcing.zeros(N), DT, DT, DELTA, A1, A2, lower=-0.5, upper=0.5)


def test_step_validates_arguments():
    s = ShellState.zeros(N)
    with pytest.raises(ValueError):
        shell_step(s, ShellForcing.zeros(N), 2 * DT, DT, DELTA, A1, A2)
    with pytest.raises(ValueError):
        shell_step(s, ShellForcing.zeros(N), DT, DT, 1.0, A1, A2)


def test_uniform_mode_is_rigid_motion():
    s = ShellState(np.zeros(N), np.full(N, 0.1), np.full(N, 0.3))
    new = shell_step(s, ShellForcing.zeros(N), DT, DT, 0.0, A1, A2)
    assert np.allclose(new.v, 0.1) and np.allclose(new.w, 0.1 * DT) and np.allclose(new.theta, 0.3)
