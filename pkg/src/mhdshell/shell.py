"""Spectral backward-Euler solver for the periodic thermoelastic shell.

The shell obeys, on the unit torus,

    (1 - delta) w_tt + Lap^2 w + Lap theta - alpha1 Lap w_t - alpha2 Lap w_tt
        + (delta / Dt) (w_t - v_target) = F,
    theta_t - Lap theta - Lap w_t = q,

with the penalty term pulling the shell velocity toward the previous window's
fluid trace.  In Fourier space every mode decouples, and one backward-Euler
step reduces to a 2x2 linear solve for ``(v+, theta+)`` per mode.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import DegeneracyError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ShellState:
    """Shell samples at the uniform torus nodes ``y_j = j / N_s``.

    Attributes:
        w: Normal displacement.
        v: Normal velocity ``w_t``.
        theta: Shell temperature.
        t: Time of the snapshot.
    """

    w: np.ndarray
    v: np.ndarray
    theta: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        for name in ("w", "v", "theta"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.w.shape == self.v.shape == self.theta.shape and self.w.ndim == 1):
            raise ValueError("shell arrays must be one-dimensional with equal length")

    @property
    def n(self) -> int:
        """Number of nodes."""
        return self.w.size

    @classmethod
    def zeros(cls, n: int, t: float = 0.0) -> "ShellState":
        """State with every sample zero."""
        z = np.zeros(n)
        return cls(z, z, z, t)


@dataclass(frozen=True)
class ShellForcing:
    """Forcing held fixed over a shell substep.

    Attributes:
        F_n: Normal surface force samples.
        q_s: Heat source samples.
        v_target: Penalty target, the previous window's normal fluid velocity.
    """

    F_n: np.ndarray
    q_s: np.ndarray
    v_target: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "ShellForcing":
        """Forcing with every sample zero."""
        z = np.zeros(n)
        return cls(z, z, z)


class ShellEnergy(NamedTuple):
    """Structure energy components ``(kinetic, bending, inertial_gradient, thermal)``."""

    kinetic: float
    bending: float
    inertial_gradient: float
    thermal: float

    @property
    def total(self) -> float:
        """Sum of the four components."""
        return self.kinetic + self.bending + self.inertial_gradient + self.thermal


@dataclass(frozen=True)
class ShellParams:
    """Shell material constants and admissible displacement bounds.

    Attributes:
        alpha1: Structural damping coefficient.
        alpha2: Rotational inertia coefficient.
        lower: Lower displacement bound ``alpha_dOmega``.
        upper: Upper displacement bound ``beta_dOmega``.
        penalty_scale: Factor multiplying ``delta / Dt`` in the penalty term.
    """

    alpha1: float = 0.1
    alpha2: float = 0.01
    lower: float = -np.inf
    upper: float = np.inf
    penalty_scale: float = 1.0


def laplacian_symbol(k):
    """Fourier symbol ``-(2 pi k)^2`` of the periodic Laplacian on the unit torus."""
    k = np.asarray(k, dtype=float)
    out = -((2.0 * np.pi * k) ** 2)
    return float(out) if out.ndim == 0 else out


def mode_numbers(n: int) -> np.ndarray:
    """Nonnegative mode numbers of a real FFT of length ``n``."""
    return np.arange(n // 2 + 1)


def spectral_laplacian(samples: np.ndarray) -> np.ndarray:
    """Apply the periodic Laplacian to node samples via the FFT."""
    samples = np.asarray(samples, dtype=float)
    s = laplacian_symbol(mode_numbers(samples.size))
    return np.fft.irfft(s * np.fft.rfft(samples), n=samples.size)


def spectral_gradient(samples: np.ndarray) -> np.ndarray:
    """Derivative with respect to the torus coordinate via the FFT.

    The Nyquist mode of an even-length signal is dropped, as is standard for
    odd-order spectral derivatives.
    """
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    k = mode_numbers(n).astype(float)
    if n % 2 == 0:
        k[-1] = 0.0
    return np.fft.irfft(2j * np.pi * k * np.fft.rfft(samples), n=n)


def _mode_weights(n: int) -> np.ndarray:
    """Parseval weights turning ``|rfft|^2`` into a mean over the torus."""
    wts = np.full(n // 2 + 1, 2.0)
    wts[0] = 1.0
    if n % 2 == 0:
        wts[-1] = 1.0
    return wts / float(n) ** 2


def _sq_norm_hat(hat: np.ndarray, n: int) -> float:
    """``||u||^2_{L^2(Gamma)}`` from real-FFT coefficients (``|Gamma| = 1``)."""
    return float(np.sum(_mode_weights(n) * np.abs(hat) ** 2))


def shell_energy(state: ShellState, alpha2: float, theta_weight: float = 1.0) -> ShellEnergy:
    """Structure energy by Parseval quadrature.

    Args:
        state: Shell state.
        alpha2: Rotational inertia coefficient.
        theta_weight: Weight of ``||theta||^2``.  The default 1.0 is the
            convention of the coupled energy inequality; 0.5 is the weight
            for which the backward-Euler step is provably dissipative.

    Returns:
        ``(||v||^2/2, ||Lap w||^2/2, alpha2 ||grad v||^2/2, theta_weight ||theta||^2)``.
    """
    n = state.n
    s = laplacian_symbol(mode_numbers(n))
    w_hat = np.fft.rfft(state.w)
    v_hat = np.fft.rfft(state.v)
    th_hat = np.fft.rfft(state.theta)
    return ShellEnergy(
        0.5 * _sq_norm_hat(v_hat, n),
        0.5 * _sq_norm_hat(s * w_hat, n),
        0.5 * alpha2 * _sq_norm_hat(np.sqrt(-s) * v_hat, n),
        theta_weight * _sq_norm_hat(th_hat, n),
    )


def shell_dissipation_rate(state: ShellState, alpha1: float) -> float:
    """Instantaneous dissipation ``alpha1 ||grad v||^2 + ||grad theta||^2``."""
    n = state.n
    root = np.sqrt(-laplacian_symbol(mode_numbers(n)))
    return alpha1 * _sq_norm_hat(root * np.fft.rfft(state.v), n) + _sq_norm_hat(
        root * np.fft.rfft(state.theta), n
    )


def penalty_work(v_new: np.ndarray, v_target: np.ndarray, delta: float, dt: float) -> tuple[float, float]:
    """Both sides of the penalty work identity.

    Returns:
        ``((delta/Dt) <v+ - v_t, v+>, (delta/(2 Dt)) (|v+ - v_t|^2 + |v+|^2 - |v_t|^2))``
        with node-mean inner products.
    """
    v_new = np.asarray(v_new, dtype=float)
    v_target = np.asarray(v_target, dtype=float)
    lhs = delta / dt * float(np.mean((v_new - v_target) * v_new))
    rhs = 0.5 * delta / dt * float(
        np.mean((v_new - v_target) ** 2) + np.mean(v_new**2) - np.mean(v_target**2)
    )
    return lhs, rhs


def shell_step(
    state: ShellState,
    forcing: ShellForcing,
    tau: float,
    dt: float,
    delta: float,
    alpha1: float,
    alpha2: float,
    lower: float = -np.inf,
    upper: float = np.inf,
    penalty_scale: float = 1.0,
) -> ShellState:
    """Advance the shell by one backward-Euler substep.

    Per mode, with ``s = -(2 pi k)^2`` and ``P = penalty_scale delta / Dt``,

        ((1-delta)/tau - alpha1 s - alpha2 s/tau + P + s^2 tau) v+ + s theta+
            = F + ((1-delta)/tau - alpha2 s/tau) v - s^2 w + P v_target,
        -s v+ + (1/tau - s) theta+ = q + theta/tau,

    and ``w+ = w + tau v+``.

    Args:
        state: Current shell state.
        forcing: Force, heat source and penalty target samples.
        tau: Substep length, ``0 < tau <= dt``.
        dt: Window length ``Dt`` of the splitting scheme.
        delta: Penalty weight in ``[0, 1)``.
        alpha1: Structural damping, nonnegative.
        alpha2: Rotational inertia, nonnegative.
        lower: Lower displacement bound.
        upper: Upper displacement bound.
        penalty_scale: Measure factor multiplying the penalty.

    Returns:
        The updated state at time ``t + tau``.

    Raises:
        DegeneracyError: If the new displacement leaves ``(lower, upper)``.
    """
    if not (0.0 < tau <= dt * (1.0 + 1e-12)):
        raise ValueError(f"substep must satisfy 0 < tau <= dt (tau={tau}, dt={dt})")
    if not (0.0 <= delta < 1.0 and alpha1 >= 0.0 and alpha2 >= 0.0):
        raise ValueError("shell step needs 0 <= delta < 1 and alpha1, alpha2 >= 0")
    n = state.n
    s = laplacian_symbol(mode_numbers(n))
    P = penalty_scale * delta / dt
    w_h = np.fft.rfft(state.w)
    v_h = np.fft.rfft(state.v)
    th_h = np.fft.rfft(state.theta)
    F_h = np.fft.rfft(forcing.F_n)
    q_h = np.fft.rfft(forcing.q_s)
    tgt_h = np.fft.rfft(forcing.v_target)

    inertia = (1.0 - delta) / tau - alpha2 * s / tau
    a11 = inertia - alpha1 * s + P + s * s * tau
    a12 = s
    a21 = -s
    a22 = 1.0 / tau - s
    r1 = F_h + inertia * v_h - s * s * w_h + P * tgt_h
    r2 = q_h + th_h / tau
    det = a11 * a22 - a12 * a21
    assert np.all(det > 0.0), "shell mode system is singular"
    v_new_h = (r1 * a22 - a12 * r2) / det
    th_new_h = (a11 * r2 - a21 * r1) / det

    v_new = np.fft.irfft(v_new_h, n=n)
    th_new = np.fft.irfft(th_new_h, n=n)
    w_new = state.w + tau * v_new
    if np.any(w_new <= lower) or np.any(w_new >= upper):
        raise DegeneracyError(
            f"shell displacement left ({lower}, {upper}) at t={state.t + tau:.6g} "
            f"(range [{w_new.min():.4g}, {w_new.max():.4g}])"
        )
    if np.any(th_new <= 0.0) and np.all(state.theta > 0.0):
        logger.warning("shell temperature lost positivity at t=%.6g", state.t + tau)
    return replace(state, w=w_new, v=v_new, theta=th_new, t=state.t + tau)


def mode_matrix(k: int, delta: float, alpha1: float, alpha2: float, penalty: float = 0.0) -> np.ndarray:
    """Continuous-time generator of one Fourier mode in the variables ``(w, v, theta)``.

    Used as an independent oracle: the exact mode evolution is the matrix
    exponential of this generator (plus forcing, which is omitted).
    """
    s = laplacian_symbol(k)
    m = (1.0 - delta) - alpha2 * s
    return np.array(
        [
            [0.0, 1.0, 0.0],
            [-s * s / m, (alpha1 * s - penalty) / m, -s / m],
            [0.0, s, s],
        ]
    )
