"""Thermodynamic closure: pressure, energy, entropy, transport and stress.

The fluid is a barotropic-plus-thermal gas with a radiation component.  With
``f`` the local radiation weight of the extended domain,

* pressure ``p = rho^gamma + rho theta + (a f / 3) theta^4``,
* specific internal energy ``e = rho^(gamma-1)/(gamma-1) + theta + a f theta^4 / rho``,
* specific entropy ``s = ln(theta / rho) + (4 a f / 3) theta^3 / rho``.

These satisfy Gibbs' relation ``theta Ds = De + p D(1/rho)``.  All functions
are vectorised over numpy arrays.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ThermoDomainError, VacuumError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EosParams:
    """Constitutive parameters.

    Attributes:
        gamma: Adiabatic exponent, greater than 5/3.
        a: Radiation constant.
        beta: Artificial-pressure exponent, at least ``max(4, gamma)``.
        delta: Artificial-pressure weight in ``[0, 1)``.
        mu_bar: Shear viscosity scale.
        eta_bar: Bulk viscosity scale.
        kappa_bar: Heat conductivity scale.
        xi: Temperature-sink weight.
        rho_ref: Reference density of the Helmholtz functional.
        theta_ref: Reference temperature of the Helmholtz functional.
    """

    gamma: float = 2.0
    a: float = 1.0
    beta: float = 4.0
    delta: float = 0.0
    mu_bar: float = 1.0
    eta_bar: float = 1.0
    kappa_bar: float = 1.0
    xi: float = 0.0
    rho_ref: float = 1.0
    theta_ref: float = 1.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Raise :class:`ConfigError` naming the first violated invariant."""
        if not self.gamma > 5.0 / 3.0:
            raise ConfigError(f"gamma must satisfy gamma > 5/3, got {self.gamma}")
        if not self.beta >= max(4.0, self.gamma):
            raise ConfigError(f"beta must satisfy beta >= max(4, gamma), got {self.beta}")
        if not 0.0 <= self.delta < 1.0:
            raise ConfigError(f"delta must satisfy 0 <= delta < 1, got {self.delta}")
        if self.a < 0.0:
            raise ConfigError("radiation constant a must be nonnegative")
        if not self.mu_bar > 0.0:
            raise ConfigError("mu_bar must be positive")
        if self.eta_bar < 0.0:
            raise ConfigError("eta_bar must be nonnegative")
        if self.kappa_bar < 0.0:
            raise ConfigError("kappa_bar must be nonnegative")
        if self.xi < 0.0:
            raise ConfigError("xi must be nonnegative")
        if not (self.rho_ref > 0.0 and self.theta_ref > 0.0):
            raise ConfigError("reference density and temperature must be positive")

    def with_(self, **changes) -> "EosParams":
        """Copy with some fields replaced."""
        return replace(self, **changes)


def pressure(rho, theta, f, eos: EosParams):
    """Thermodynamic pressure ``rho^gamma + rho theta + (a f / 3) theta^4``."""
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return rho**eos.gamma + rho * theta + (eos.a * np.asarray(f) / 3.0) * theta**4


def thermal_pressure(rho, theta, f, eos: EosParams):
    """Temperature-dependent part ``rho theta + (a f / 3) theta^4`` of the pressure."""
    theta = np.asarray(theta, dtype=float)
    return np.asarray(rho) * theta + (eos.a * np.asarray(f) / 3.0) * theta**4


def total_pressure(rho, b, theta, f, eos: EosParams):
    """Pressure plus magnetic pressure ``b^2/2`` and artificial pressure ``delta (rho+b)^beta``."""
    rho = np.asarray(rho, dtype=float)
    b = np.asarray(b, dtype=float)
    return pressure(rho, theta, f, eos) + 0.5 * b * b + eos.delta * (rho + b) ** eos.beta


def sound_speed_squared(rho, b, theta, eos: EosParams):
    """Squared fast signal speed used by the CFL bound.

    This is ``dp/drho`` at fixed temperature, plus the artificial-pressure
    stiffness and the magnetic contribution ``b^2 / rho`` where ``rho > 0``.
    With ``b = 0`` and ``delta = 0`` it reduces to ``gamma rho^(gamma-1) + theta``.
    """
    rho = np.asarray(rho, dtype=float)
    b = np.asarray(b, dtype=float)
    c2 = eos.gamma * rho ** (eos.gamma - 1.0) + np.asarray(theta, dtype=float)
    if eos.delta > 0.0:
        c2 = c2 + eos.delta * eos.beta * (rho + b) ** (eos.beta - 1.0)
    safe = np.where(rho > 0.0, rho, 1.0)
    return c2 + np.where(rho > 0.0, b * b / safe, 0.0)


def internal_energy(rho, theta, f, eos: EosParams):
    """Specific internal energy.

    Raises:
        VacuumError: If any density is zero.
    """
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0.0):
        raise VacuumError("specific internal energy is undefined at zero density")
    theta = np.asarray(theta, dtype=float)
    return rho ** (eos.gamma - 1.0) / (eos.gamma - 1.0) + theta + eos.a * np.asarray(f) * theta**4 / rho


def internal_energy_density(rho, qth, eos: EosParams):
    """Volumetric internal energy ``rho e = rho^gamma/(gamma-1) + q_th``, valid in vacuum."""
    return np.asarray(rho, dtype=float) ** eos.gamma / (eos.gamma - 1.0) + np.asarray(qth, dtype=float)


def thermal_energy(rho, theta, f, eos: EosParams):
    """Thermal energy density ``q_th = rho theta + a f theta^4``."""
    theta = np.asarray(theta, dtype=float)
    return np.asarray(rho) * theta + eos.a * np.asarray(f) * theta**4


def thermal_capacity(rho, theta, f, eos: EosParams):
    """Volumetric heat capacity ``d q_th / d theta = rho + 4 a f theta^3``."""
    theta = np.asarray(theta, dtype=float)
    return np.asarray(rho) + 4.0 * eos.a * np.asarray(f) * theta**3


def entropy(rho, theta, f, eos: EosParams):
    """Specific entropy ``ln(theta/rho) + (4 a f / 3) theta^3 / rho``.

    Raises:
        ThermoDomainError: If any density or temperature is not positive.
    """
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(rho <= 0.0) or np.any(theta <= 0.0):
        raise ThermoDomainError("entropy requires positive density and temperature")
    return np.log(theta / rho) + (4.0 * eos.a * np.asarray(f) / 3.0) * theta**3 / rho


def transport_coeffs(theta, g, h, eos: EosParams):
    """Shear viscosity, bulk viscosity and heat conductivity.

    Returns:
        ``(mu_bar (1+theta) g, eta_bar (1+theta) g, kappa_bar (1+theta^3) h)``.
    """
    theta = np.asarray(theta, dtype=float)
    g = np.asarray(g, dtype=float)
    mu = eos.mu_bar * (1.0 + theta) * g
    eta = eos.eta_bar * (1.0 + theta) * g
    kappa = eos.kappa_bar * (1.0 + theta**3) * np.asarray(h, dtype=float)
    return mu, eta, kappa


def stress(theta, grad_u, g, eos: EosParams) -> np.ndarray:
    """Viscous stress ``mu (grad u + grad u^T - div u I) + eta div u I``.

    Args:
        theta: Temperature, broadcastable against the leading shape of ``grad_u``.
        grad_u: Velocity gradient with trailing shape ``(2, 2)``, entry
            ``[i, j] = d u_i / d x_j``.
        g: Viscosity extension weight.
        eos: Constitutive parameters.
    """
    G = np.asarray(grad_u, dtype=float)
    mu, eta, _ = transport_coeffs(theta, g, 1.0, eos)
    mu = np.asarray(mu)[..., None, None]
    eta = np.asarray(eta)[..., None, None]
    div = (G[..., 0, 0] + G[..., 1, 1])[..., None, None]
    eye = np.eye(2)
    return mu * (G + np.swapaxes(G, -1, -2) - div * eye) + eta * div * eye


def stress_power(theta, grad_u, g, eos: EosParams):
    """Viscous dissipation ``S : grad u`` as an explicit sum of squares.

    ``S : grad u = mu [(u_x,x - u_y,y)^2 + (u_x,y + u_y,x)^2] + eta (div u)^2``,
    which is nonnegative for any gradient.
    """
    G = np.asarray(grad_u, dtype=float)
    mu, eta, _ = transport_coeffs(theta, g, 1.0, eos)
    a = G[..., 0, 0] - G[..., 1, 1]
    c = G[..., 0, 1] + G[..., 1, 0]
    d = G[..., 0, 0] + G[..., 1, 1]
    return mu * (a * a + c * c) + eta * d * d


def recover_temperature(rho, qth, f, eos: EosParams, theta_guess=None):
    """Invert ``rho theta + a f theta^4 = q_th`` for ``theta >= 0``.

    The left side is strictly increasing and convex in ``theta``, so Newton
    iteration started above the root decreases monotonically onto it.  The
    start ``min(q/rho, (q/(a f))^(1/4))`` is always an upper bound.  Cells
    with zero heat capacity (vacuum without radiation) return ``theta_guess``
    if given, else zero.

    Args:
        rho: Density, nonnegative.
        qth: Thermal energy density, nonnegative.
        f: Radiation weight.
        eos: Constitutive parameters.
        theta_guess: Optional fallback for cells with no heat capacity.

    Returns:
        Temperature array with absolute accuracy ``1e-12 max(1, theta)``.
    """
    rho, qth, af = np.broadcast_arrays(
        np.asarray(rho, dtype=float), np.asarray(qth, dtype=float), eos.a * np.asarray(f, dtype=float)
    )
    qth = np.maximum(qth, 0.0)
    big = np.finfo(float).max
    with np.errstate(all="ignore"):
        t_lin = np.where(rho > 0.0, qth / np.where(rho > 0.0, rho, 1.0), big)
        t_rad = np.where(af > 0.0, (qth / np.where(af > 0.0, af, 1.0)) ** 0.25, big)
    theta = np.minimum(t_lin, t_rad)
    dead = theta == big
    theta = np.where(dead, 0.0, theta)
    for _ in range(100):
        F = rho * theta + af * theta**4 - qth
        dF = rho + 4.0 * af * theta**3
        step = np.where(dF > 0.0, F / np.where(dF > 0.0, dF, 1.0), 0.0)
        theta = np.maximum(theta - step, 0.0)
        if np.all(np.abs(step) <= 1e-13 * np.maximum(1.0, theta)):
            break
    if theta_guess is not None:
        theta = np.where(dead, np.asarray(theta_guess, dtype=float), theta)
    return float(theta) if theta.ndim == 0 else theta


def helmholtz(rho, theta, f, eos: EosParams):
    """Helmholtz function ``H = rho (e - theta_ref s)``."""
    rho = np.asarray(rho, dtype=float)
    return rho * (internal_energy(rho, theta, f, eos) - eos.theta_ref * entropy(rho, theta, f, eos))


def helmholtz_drho(rho, theta, f, eos: EosParams):
    """Partial derivative of :func:`helmholtz` with respect to density.

    ``d/drho [rho e] = gamma rho^(gamma-1)/(gamma-1) + theta`` and
    ``d/drho [rho s] = ln(theta/rho) - 1``; the radiation parts of ``rho e``
    and ``rho s`` do not depend on density.
    """
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    d_rho_e = eos.gamma * rho ** (eos.gamma - 1.0) / (eos.gamma - 1.0) + theta
    d_rho_s = np.log(theta / rho) - 1.0
    return d_rho_e - eos.theta_ref * d_rho_s


def helmholtz_renormalized(rho, theta, f, eos: EosParams):
    """Relative Helmholtz energy ``H(rho,theta) - dH/drho(rho_ref,1)(rho-rho_ref) - H(rho_ref,1)``."""
    r0 = eos.rho_ref
    return (
        helmholtz(rho, theta, f, eos)
        - helmholtz_drho(r0, 1.0, f, eos) * (np.asarray(rho, dtype=float) - r0)
        - helmholtz(r0, 1.0, f, eos)
    )


def gibbs_residuals(rho, theta, f, eos: EosParams, step: float = 1e-5):
    """Finite-difference residuals of Gibbs' relation.

    Returns:
        ``(r_theta, r_rho)``, the relative residuals
        ``|theta s_theta - e_theta| / |e_theta|`` and
        ``|theta s_rho - (e_rho - p/rho^2)| / max(1, |p/rho^2|)``.
    """
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)

    def d_theta(fn):
        return (fn(rho, theta + step, f, eos) - fn(rho, theta - step, f, eos)) / (2.0 * step)

    def d_rho(fn):
        return (fn(rho + step, theta, f, eos) - fn(rho - step, theta, f, eos)) / (2.0 * step)

    e_t, s_t = d_theta(internal_energy), d_theta(entropy)
    e_r, s_r = d_rho(internal_energy), d_rho(entropy)
    p_over = pressure(rho, theta, f, eos) / rho**2
    r_theta = np.abs(theta * s_t - e_t) / np.abs(e_t)
    r_rho = np.abs(theta * s_r - (e_r - p_over)) / np.maximum(1.0, np.abs(p_over))
    return r_theta, r_rho
