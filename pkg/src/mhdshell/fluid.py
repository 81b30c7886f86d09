"""Finite-volume fluid solver on the fixed box with immersed penalty coupling.

State variables live at cell centres of a uniform ``n x n`` grid: density
``rho``, vertical magnetic field ``b``, momentum ``m = rho u`` and thermal
energy density ``q_th = rho theta + a f theta^4``.  One fluid substep performs

1. conservative first-order upwind transport of ``rho`` and ``b``;
2. the momentum update: upwind advection, centred total-pressure gradient,
   centred viscous stress divergence and the spread penalty force;
3. the thermal update: upwind advection, pressure work, viscous heating,
   implicit heat conduction and the implicit ``xi theta^5`` sink.

Velocities vanish on the outermost ring of cells, and face fluxes through the
box boundary are zero, so mass and magnetic flux are conserved to rounding.

Centred differences are applied with zero padding outside the box.  The
resulting first-difference matrix is exactly skew-symmetric, so the discrete
pressure work and viscous dissipation cancel between the kinetic and thermal
budgets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.ndimage import maximum_filter

from . import constitutive as eos_mod
from .constitutive import EosParams
from .errors import CFLError, NaNGuardError
from .geometry import Grid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FluidSettings:
    """Discretisation knobs of the fluid solver.

    Attributes:
        nx: Cells per axis.
        cfl: CFL safety factor ``C_cfl``.
        eps_vacuum: Velocity regularisation relative to the initial peak density.
        kernel_halfwidth: Marker kernel half-width in cells.
        markers: Number of interface markers (``None`` means one per shell node).
        active_fraction: Cells with ``rho`` below this fraction of the peak
            density are excluded from the diffusive and viscous accuracy bounds.
    """

    nx: int = 128
    cfl: float = 0.4
    eps_vacuum: float = 1e-8
    kernel_halfwidth: float = 2.0
    markers: int | None = None
    active_fraction: float = 0.5


@dataclass(frozen=True)
class FluidState:
    """Cell-centred fluid fields.

    Attributes:
        rho: Density, shape ``(n, n)``.
        b: Vertical magnetic field, shape ``(n, n)``.
        mom: Momentum density, shape ``(2, n, n)``.
        qth: Thermal energy density, shape ``(n, n)``.
        theta: Temperature recovered from ``qth`` at the last update.
        t: Time.
        grid: Grid the fields live on.
        eps_v: Velocity regularisation parameter.
    """

    rho: np.ndarray
    b: np.ndarray
    mom: np.ndarray
    qth: np.ndarray
    theta: np.ndarray
    t: float
    grid: Grid
    eps_v: float

    def velocity(self) -> np.ndarray:
        """Regularised velocity with the boundary ring set to zero."""
        u = velocity(self.rho, self.mom, self.eps_v)
        u[:, self.grid.boundary_mask] = 0.0
        return u


class Coefficients(NamedTuple):
    """Extended coefficient fields ``(g, h, f)`` on the grid."""

    g: np.ndarray
    h: np.ndarray
    f: np.ndarray

    @classmethod
    def ones(cls, n: int) -> "Coefficients":
        """Unextended fields (every weight equal to one)."""
        one = np.ones((n, n))
        return cls(one, one, one)


@dataclass(frozen=True)
class PenaltyTarget:
    """Marker data for the immersed penalty force within one fluid substep.

    Attributes:
        kernel: Sparse ``(N_s, n*n)`` interpolation matrix; its transpose spreads.
        target: Prescribed marker velocities ``w_t n``, shape ``(N_s, 2)``.
        weights: Quadrature weight of each marker.
        coefficient: Penalty strength ``delta / Dt``.
        normals: Reference normals used to form the normal trace.
    """

    kernel: sp.csr_matrix
    target: np.ndarray
    weights: np.ndarray
    coefficient: float
    normals: np.ndarray


class SubstepReport(NamedTuple):
    """Integrated diagnostics of one fluid substep."""

    dissipation: float
    exterior_dissipation: float
    exterior_production: float
    sink: float
    exterior_sink: float
    trace: np.ndarray | None


# ---------------------------------------------------------------------------
# Elementary operators
# ---------------------------------------------------------------------------


def velocity(rho, mom, eps_v: float) -> np.ndarray:
    """Vacuum-regularised velocity ``m rho / (rho^2 + eps_v^2)``."""
    rho = np.asarray(rho, dtype=float)
    return np.asarray(mom, dtype=float) * (rho / (rho * rho + eps_v * eps_v))


def ddx(f: np.ndarray, h: float) -> np.ndarray:
    """Centred x-difference with zero padding beyond the box."""
    out = np.empty_like(f)
    out[1:-1] = f[2:] - f[:-2]
    out[0] = f[1]
    out[-1] = -f[-2]
    return out / (2.0 * h)


def ddy(f: np.ndarray, h: float) -> np.ndarray:
    """Centred y-difference with zero padding beyond the box."""
    out = np.empty_like(f)
    out[:, 1:-1] = f[:, 2:] - f[:, :-2]
    out[:, 0] = f[:, 1]
    out[:, -1] = -f[:, -2]
    return out / (2.0 * h)


def velocity_gradient(u: np.ndarray, h: float) -> np.ndarray:
    """Centred velocity gradient ``G[..., i, j] = d u_i / d x_j`` of shape ``(n, n, 2, 2)``."""
    G = np.empty(u.shape[1:] + (2, 2))
    G[..., 0, 0] = ddx(u[0], h)
    G[..., 0, 1] = ddy(u[0], h)
    G[..., 1, 0] = ddx(u[1], h)
    G[..., 1, 1] = ddy(u[1], h)
    return G


def divergence(u: np.ndarray, h: float) -> np.ndarray:
    """Centred divergence of a cell vector field."""
    return ddx(u[0], h) + ddy(u[1], h)


def face_velocities(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interior face velocities by arithmetic averaging of cell values.

    Returns:
        ``(ux_faces, uy_faces)`` of shapes ``(n-1, n)`` and ``(n, n-1)``.
        Faces on the box boundary carry zero velocity and are omitted.
    """
    return 0.5 * (u[0, :-1, :] + u[0, 1:, :]), 0.5 * (u[1, :, :-1] + u[1, :, 1:])


def outflow_rate(faces: tuple[np.ndarray, np.ndarray], h: float) -> np.ndarray:
    """Per-cell sum of outgoing face speeds divided by ``h``."""
    ux, uy = faces
    n = ux.shape[1]
    out = np.zeros((n, n))
    out[:-1, :] += np.maximum(ux, 0.0)
    out[1:, :] += np.maximum(-ux, 0.0)
    out[:, :-1] += np.maximum(uy, 0.0)
    out[:, 1:] += np.maximum(-uy, 0.0)
    return out / h


def transport_step(field: np.ndarray, faces: tuple[np.ndarray, np.ndarray], tau: float, h: float) -> np.ndarray:
    """Conservative first-order upwind update of ``f_t + div(f u) = 0``.

    Args:
        field: Cell values, shape ``(n, n)``.
        faces: Interior face velocities from :func:`face_velocities`.
        tau: Time step.
        h: Cell width.

    Returns:
        Updated cell values.

    Raises:
        CFLError: If ``tau`` times the largest outflow rate exceeds one, in
            which case nonnegativity could be lost.
    """
    ux, uy = faces
    rate = outflow_rate(faces, h)
    if tau * float(rate.max(initial=0.0)) > 1.0 + 1e-12:
        raise CFLError(f"transport step violates CFL (tau*rate = {tau * rate.max():.3f})")
    Fx = np.where(ux > 0.0, ux * field[:-1, :], ux * field[1:, :])
    Fy = np.where(uy > 0.0, uy * field[:, :-1], uy * field[:, 1:])
    net = np.zeros_like(field)
    net[:-1, :] += Fx
    net[1:, :] -= Fx
    net[:, :-1] += Fy
    net[:, 1:] -= Fy
    return field - (tau / h) * net


# ---------------------------------------------------------------------------
# Markers: sampling and spreading
# ---------------------------------------------------------------------------


def _index_coordinates(points: np.ndarray, grid: Grid) -> np.ndarray:
    """Continuous cell-index coordinates of points (cell centres at integers)."""
    return (np.asarray(points, dtype=float) + grid.halfwidth) / grid.h - 0.5


def kernel_matrix(points: np.ndarray, grid: Grid, halfwidth: float = 2.0) -> sp.csr_matrix:
    """Cosine-hat interpolation matrix of the markers.

    The one-dimensional kernel is ``(1 + cos(pi r / W)) / (2 W)`` in index
    units with half-width ``W``; the tensor-product weights of every marker
    are normalised to sum to one.

    Args:
        points: Marker positions, shape ``(N_s, 2)``.
        grid: Fluid grid.
        halfwidth: Kernel half-width in cells.

    Returns:
        CSR matrix of shape ``(N_s, n*n)``.

    Raises:
        ValueError: If a kernel footprint leaves the grid.
    """
    xi = _index_coordinates(points, grid)
    span = int(np.ceil(halfwidth))
    offsets = np.arange(-span + 1, span + 1)
    base = np.floor(xi).astype(int)
    ix = base[:, 0:1] + offsets[None, :]
    iy = base[:, 1:2] + offsets[None, :]
    if ix.min() < 0 or iy.min() < 0 or ix.max() >= grid.n or iy.max() >= grid.n:
        raise ValueError("marker kernel footprint leaves the grid")

    def weights(idx, c):
        r = np.abs(idx - c[:, None])
        return np.where(r < halfwidth, 0.5 * (1.0 + np.cos(np.pi * r / halfwidth)) / halfwidth, 0.0)

    wx = weights(ix, xi[:, 0])
    wy = weights(iy, xi[:, 1])
    W = wx[:, :, None] * wy[:, None, :]
    W /= W.sum(axis=(1, 2), keepdims=True)
    cols = ix[:, :, None] * grid.n + iy[:, None, :]
    rows = np.broadcast_to(np.arange(len(points))[:, None, None], W.shape)
    return sp.csr_matrix((W.ravel(), (rows.ravel(), cols.ravel())), shape=(len(points), grid.n * grid.n))


def bilinear_sample(field: np.ndarray, points: np.ndarray, grid: Grid) -> np.ndarray:
    """Bilinear interpolation of a cell field (scalar or leading-axis vector) at points.

    Raises:
        ValueError: If a point lies outside the hull of cell centres.
    """
    xi = _index_coordinates(points, grid)
    i0 = np.floor(xi).astype(int)
    if i0.min() < 0 or i0.max() > grid.n - 2:
        raise ValueError("marker outside the interpolation grid")
    t = xi - i0
    a, b = i0[:, 0], i0[:, 1]
    tx, ty = t[:, 0], t[:, 1]
    return (
        field[..., a, b] * (1 - tx) * (1 - ty)
        + field[..., a + 1, b] * tx * (1 - ty)
        + field[..., a, b + 1] * (1 - tx) * ty
        + field[..., a + 1, b + 1] * tx * ty
    )


def spread_penalty(forces: np.ndarray, kernel: sp.csr_matrix, weights: np.ndarray, grid: Grid) -> np.ndarray:
    """Distribute marker forces to a cell force density.

    Args:
        forces: Force per unit boundary measure at each marker, ``(N_s, 2)``.
        kernel: Interpolation matrix from :func:`kernel_matrix`.
        weights: Boundary measure carried by each marker.
        grid: Fluid grid.

    Returns:
        Force density of shape ``(2, n, n)`` whose cell sum times ``h^2``
        equals ``sum_j weights_j forces_j``.
    """
    scaled = np.asarray(forces, dtype=float) * np.asarray(weights, dtype=float)[:, None]
    out = kernel.T @ scaled / grid.h**2
    return out.T.reshape(2, grid.n, grid.n)


def sample_kernel(field: np.ndarray, kernel: sp.csr_matrix) -> np.ndarray:
    """Kernel interpolation of a ``(2, n, n)`` field at markers, shape ``(N_s, 2)``."""
    return (kernel @ field.reshape(field.shape[0], -1).T).reshape(-1, field.shape[0])


class InterfaceCoupling(NamedTuple):
    """Fluid quantities sampled at the deformed markers."""

    velocity: np.ndarray
    traction: np.ndarray
    normal_force: np.ndarray
    heat_flux: np.ndarray
    kernel: sp.csr_matrix


def interface_sample(
    state: FluidState,
    coeffs: Coefficients,
    eos: EosParams,
    points: np.ndarray,
    normals: np.ndarray,
    ref_normals: np.ndarray,
    halfwidth: float = 2.0,
) -> InterfaceCoupling:
    """Sample velocity, traction and heat flux at deformed marker positions.

    Args:
        state: Fluid state.
        coeffs: Extended coefficient fields.
        eos: Constitutive parameters.
        points: Deformed marker positions ``phi_w(y_j)``.
        normals: Unit normals ``n_w`` of the deformed boundary.
        ref_normals: Reference normals ``n`` used for the normal force.
        halfwidth: Kernel half-width in cells for the returned kernel.

    Returns:
        Velocity ``(N_s, 2)``; traction ``-[(p + b^2/2 + delta (rho+b)^beta) I - S] n_w``;
        its component along the reference normal; heat flux
        ``-(kappa grad theta / theta) . n_w``; and the spreading kernel.
    """
    grid = state.grid
    h = grid.h
    u = state.velocity()
    G = velocity_gradient(u, h)
    S = eos_mod.stress(state.theta, G, coeffs.g, eos)
    p = eos_mod.total_pressure(state.rho, state.b, state.theta, coeffs.f, eos)
    u_m = bilinear_sample(u, points, grid).T
    p_m = bilinear_sample(p, points, grid)
    S_m = bilinear_sample(np.moveaxis(S, (-2, -1), (0, 1)), points, grid)
    S_m = np.moveaxis(S_m, -1, 0)
    traction = -(p_m[:, None] * normals) + np.einsum("kij,kj->ki", S_m, normals)
    _, _, kappa = eos_mod.transport_coeffs(state.theta, coeffs.g, coeffs.h, eos)
    gx, gy = np.gradient(state.theta, h)
    theta_m = bilinear_sample(state.theta, points, grid)
    safe = np.where(theta_m > 0.0, theta_m, 1.0)
    grad_m = bilinear_sample(np.stack([gx, gy]), points, grid).T
    kappa_m = bilinear_sample(kappa, points, grid)
    heat = np.where(theta_m > 0.0, -kappa_m * np.sum(grad_m * normals, axis=1) / safe, 0.0)
    return InterfaceCoupling(
        velocity=u_m,
        traction=traction,
        normal_force=np.sum(traction * ref_normals, axis=1),
        heat_flux=heat,
        kernel=kernel_matrix(points, grid, halfwidth),
    )


# ---------------------------------------------------------------------------
# Time-step restriction
# ---------------------------------------------------------------------------


def cfl_dt(state: FluidState, coeffs: Coefficients, eos: EosParams, cfl: float = 0.4,
           active_fraction: float = 0.5) -> float:
    """Largest stable fluid substep.

    Combines the advective bound ``h / (|u| + c_s)``, the diffusive bound
    ``rho h^2 / (2 kappa)``, a viscous bound ``rho h^2 / (4 mu + 2 eta)`` and
    the upwind positivity bound ``1 / outflow``, each times ``cfl``.  The
    diffusive and viscous bounds only consider cells whose density exceeds
    ``active_fraction`` of the peak; near-vacuum cells are handled by the
    implicit conduction solve and the point-implicit momentum update.

    Raises:
        NaNGuardError: If the state contains non-finite values.
    """
    rho, theta = state.rho, state.theta
    if not (np.all(np.isfinite(rho)) and np.all(np.isfinite(state.mom)) and np.all(np.isfinite(theta))):
        raise NaNGuardError("non-finite fluid state")
    h = state.grid.h
    u = state.velocity()
    speed = np.hypot(u[0], u[1])
    c2 = eos_mod.sound_speed_squared(rho, state.b, theta, eos)
    bound = float(np.min(h / (speed + np.sqrt(c2))))
    rate = float(outflow_rate(face_velocities(u), h).max(initial=0.0))
    if rate > 0.0:
        bound = min(bound, 1.0 / rate)
    active = rho >= active_fraction * float(rho.max(initial=0.0))
    if np.any(active) and rho.max() > 0.0:
        mu, eta, kappa = eos_mod.transport_coeffs(theta, coeffs.g, coeffs.h, eos)
        r = rho[active]
        if eos.kappa_bar > 0.0:
            bound = min(bound, float(np.min(r * h * h / (2.0 * kappa[active]))))
        bound = min(bound, float(np.min(r * h * h / (4.0 * mu[active] + 2.0 * eta[active]))))
    dt = cfl * bound
    if not np.isfinite(dt) or dt <= 0.0:
        raise NaNGuardError(f"invalid time step {dt}")
    return dt


# ---------------------------------------------------------------------------
# Momentum
# ---------------------------------------------------------------------------


def viscous_force(u: np.ndarray, theta: np.ndarray, g: np.ndarray, eos: EosParams, h: float):
    """Stress divergence and dissipation ``S : grad u`` on cells.

    Returns:
        ``(div S, S : grad u)`` with shapes ``(2, n, n)`` and ``(n, n)``.
    """
    G = velocity_gradient(u, h)
    S = eos_mod.stress(theta, G, g, eos)
    div_S = np.stack([ddx(S[..., 0, 0], h) + ddy(S[..., 0, 1], h), ddx(S[..., 1, 0], h) + ddy(S[..., 1, 1], h)])
    return div_S, eos_mod.stress_power(theta, G, g, eos)


def viscous_gershgorin(theta: np.ndarray, g: np.ndarray, eos: EosParams, h: float) -> np.ndarray:
    """Row-sum bound of the discrete viscous operator, ``(4 mu + 2 eta) / h^2`` with local maxima."""
    mu, eta, _ = eos_mod.transport_coeffs(theta, g, 1.0, eos)
    return (4.0 * maximum_filter(mu, size=3, mode="nearest") + 2.0 * maximum_filter(eta, size=3, mode="nearest")) / h**2


def momentum_step(
    state: FluidState,
    rho_new: np.ndarray,
    b_new: np.ndarray,
    coeffs: Coefficients,
    eos: EosParams,
    tau: float,
    penalty: PenaltyTarget | None = None,
    u: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance the momentum by one substep.

    The transport, pressure and viscous terms are explicit,
    ``m* = adv(m) + tau (-grad p_tot + div S)``.  The penalty force is
    implicit: with ``P_c`` the cell inertia, the new velocity solves

        P_c (u+ - u) + rho+ u + tau (c / h^2) K^T W (K u+ - target) = m*,

    where ``K`` is the marker kernel, ``W`` the marker weights and ``c`` the
    penalty coefficient.  ``P_c = rho+`` wherever the density dominates the
    local viscous stiffness, so there the update is the plain momentum
    balance ``rho+ u+ = m* + tau F_pen(u+)``.  In near-vacuum cells
    ``P_c = tau (4 mu + 2 eta) / h^2`` instead, a point-implicit (damped
    Jacobi) treatment that stays bounded as the density tends to zero.  The
    implicit penalty couples only the cells inside the kernel footprints, so
    its linear system is small.

    Args:
        state: Fluid state at the start of the substep.
        rho_new: Transported density.
        b_new: Transported magnetic field.
        coeffs: Extended coefficient fields.
        eos: Constitutive parameters (``delta`` enters the pressure).
        tau: Substep length.
        penalty: Marker penalty data, or ``None`` for an uncoupled fluid.
        u: Velocity at the start of the substep (recomputed if omitted).

    Returns:
        ``(mom_new, S : grad u)``.

    Raises:
        NaNGuardError: If the update produces non-finite values.
    """
    grid = state.grid
    h = grid.h
    if u is None:
        u = state.velocity()
    faces = face_velocities(u)
    m_adv = np.stack([transport_step(state.mom[0], faces, tau, h), transport_step(state.mom[1], faces, tau, h)])
    p = eos_mod.total_pressure(rho_new, b_new, state.theta, coeffs.f, eos)
    force = -np.stack([ddx(p, h), ddy(p, h)])
    div_S, heating = viscous_force(u, state.theta, coeffs.g, eos, h)
    force += div_S
    explicit = m_adv + tau * force
    P = np.maximum(rho_new, tau * viscous_gershgorin(state.theta, coeffs.g, eos, h))
    live = (rho_new > 0.0) & ~grid.boundary_mask
    rhs = explicit - rho_new * u + P * u
    u_new = np.zeros_like(u)
    u_new[:, live] = rhs[:, live] / P[live]
    if penalty is not None and penalty.coefficient > 0.0:
        u_new = _implicit_penalty(u_new, rhs, P, live, penalty, tau, grid)
    mom_new = np.where(P > rho_new, rho_new * u_new, explicit)
    coupled = _penalty_cells(penalty, grid)
    if coupled is not None:
        mom_new[:, coupled] = rho_new[coupled] * u_new[:, coupled]
    mom_new[:, ~live] = 0.0
    if not np.all(np.isfinite(mom_new)):
        raise NaNGuardError(f"non-finite momentum at t={state.t:.6g}")
    return mom_new, heating


def _penalty_cells(penalty: PenaltyTarget | None, grid: Grid) -> np.ndarray | None:
    """Boolean mask of the cells inside the marker kernel footprints."""
    if penalty is None or penalty.coefficient <= 0.0:
        return None
    mask = np.zeros(grid.n * grid.n, dtype=bool)
    mask[penalty.kernel.indices] = True
    return mask.reshape(grid.n, grid.n)


def _implicit_penalty(u_new, rhs, P, live, penalty: PenaltyTarget, tau: float, grid: Grid) -> np.ndarray:
    """Solve the penalty-coupled velocity system on the kernel footprint cells."""
    K = penalty.kernel.tocsc()
    cols = np.unique(penalty.kernel.indices)
    cols = cols[live.ravel()[cols]]
    if cols.size == 0:
        return u_new
    Ks = K[:, cols]
    c = tau * penalty.coefficient / grid.h**2
    Wd = sp.diags(np.asarray(penalty.weights, dtype=float))
    A = (sp.diags(P.ravel()[cols]) + c * (Ks.T @ Wd @ Ks)).tocsc()
    forcing = c * (Ks.T @ (Wd @ penalty.target))
    b = np.stack([rhs[0].ravel()[cols], rhs[1].ravel()[cols]], axis=1) + forcing
    sol = spla.splu(A).solve(b)
    out = u_new.reshape(2, -1).copy()
    out[0, cols] = sol[:, 0]
    out[1, cols] = sol[:, 1]
    return out.reshape(u_new.shape)


# ---------------------------------------------------------------------------
# Thermal energy
# ---------------------------------------------------------------------------


def _harmonic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    s = a + b
    return np.where(s > 0.0, 2.0 * a * b / np.where(s > 0.0, s, 1.0), 0.0)


def conduction_faces(kappa: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Face conductances ``kappa_f / h^2`` using harmonic means."""
    return _harmonic(kappa[:-1, :], kappa[1:, :]) / h**2, _harmonic(kappa[:, :-1], kappa[:, 1:]) / h**2


def conduction_divergence(theta: np.ndarray, faces: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Flux-form ``div(kappa grad theta)`` with zero flux through the box boundary."""
    cx, cy = faces
    fx = cx * (theta[1:, :] - theta[:-1, :])
    fy = cy * (theta[:, 1:] - theta[:, :-1])
    out = np.zeros_like(theta)
    out[:-1, :] += fx
    out[1:, :] -= fx
    out[:, :-1] += fy
    out[:, 1:] -= fy
    return out


def conduction_matrix(faces: tuple[np.ndarray, np.ndarray], n: int) -> sp.csc_matrix:
    """Sparse matrix of ``-div(kappa grad .)`` on the flattened grid (index ``ix*n + iy``)."""
    cx, cy = faces
    ex = np.zeros((n, n))
    ex[:-1, :] = cx
    ey = np.zeros((n, n))
    ey[:, :-1] = cy
    ex, ey = ex.ravel(), ey.ravel()
    diag = ex.copy()
    diag[n:] += ex[:-n]
    diag += ey
    diag[1:] += ey[:-1]
    return sp.diags(
        [diag, -ex[:-n], -ex[:-n], -ey[:-1], -ey[:-1]], [0, n, -n, 1, -1], shape=(n * n, n * n), format="csc"
    )


def sink_solve(rho, qth, f, eos: EosParams, xi: float, tau: float, theta_guess=None) -> np.ndarray:
    """Temperature after the implicit sink ``q(theta) + tau xi theta^5 = q_th``."""
    theta = eos_mod.recover_temperature(rho, qth, f, eos, theta_guess=theta_guess)
    if xi <= 0.0:
        return theta
    af = eos.a * np.asarray(f)
    live = qth > 0.0
    for _ in range(100):
        F = rho * theta + af * theta**4 + tau * xi * theta**5 - qth
        dF = rho + 4.0 * af * theta**3 + 5.0 * tau * xi * theta**4
        step = np.where(live & (dF > 0.0), F / np.where(dF > 0.0, dF, 1.0), 0.0)
        theta = np.maximum(theta - step, 0.0)
        if np.all(np.abs(step) <= 1e-14 * np.maximum(1.0, theta)):
            break
    return theta


def thermal_step(
    state: FluidState,
    rho_new: np.ndarray,
    coeffs: Coefficients,
    eos: EosParams,
    tau: float,
    xi: float,
    u: np.ndarray | None = None,
    heating: np.ndarray | None = None,
    max_newton: int = 8,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance the thermal energy density by one substep.

    Stages: upwind advection; pressure work ``-p_th div u`` (implicit in the
    expanding cells so that ``q_th`` stays nonnegative) and viscous heating;
    backward-Euler heat conduction in flux form, linearised about the current
    temperature and iterated until every cell energy is nonnegative; and the
    implicit sink.

    Args:
        state: Fluid state at the start of the substep.
        rho_new: Transported density.
        coeffs: Extended coefficient fields.
        eos: Constitutive parameters.
        tau: Substep length.
        xi: Sink weight.
        u: Velocity at the start of the substep.
        heating: Viscous dissipation ``S : grad u`` (recomputed if omitted).
        max_newton: Cap on conduction linearisation sweeps.

    Returns:
        ``(qth_new, theta_new, sink_density)`` where ``sink_density`` is the
        energy removed per unit volume, ``tau xi theta_new^5``.
    """
    grid = state.grid
    h, n = grid.h, grid.n
    if u is None:
        u = state.velocity()
    if heating is None:
        _, heating = viscous_force(u, state.theta, coeffs.g, eos, h)
    faces = face_velocities(u)
    q = transport_step(state.qth, faces, tau, h)
    div_u = divergence(u, h)
    p_th = eos_mod.thermal_pressure(state.rho, state.theta, coeffs.f, eos)
    q_old = state.qth
    ratio = np.where(q_old > 0.0, p_th / np.where(q_old > 0.0, q_old, 1.0), 0.0)
    expand = np.maximum(div_u, 0.0)
    q = (q - tau * p_th * np.minimum(div_u, 0.0) + tau * heating) / (1.0 + tau * ratio * expand)

    theta0 = eos_mod.recover_temperature(rho_new, q, coeffs.f, eos, theta_guess=state.theta)
    if eos.kappa_bar > 0.0:
        _, _, kappa = eos_mod.transport_coeffs(theta0, coeffs.g, coeffs.h, eos)
        cond = conduction_faces(kappa, h)
        L = conduction_matrix(cond, n)
        theta_k = theta0
        for sweep in range(max_newton):
            cap = eos_mod.thermal_capacity(rho_new, theta_k, coeffs.f, eos)
            cap = np.maximum(cap, 1e-14 * float(cap.max(initial=0.0)) + 1e-300)
            q_k = eos_mod.thermal_energy(rho_new, theta_k, coeffs.f, eos)
            A = sp.diags(cap.ravel() / tau) + L
            rhs = (cap * theta_k - (q_k - q)) / tau
            theta_k = spla.spsolve(A.tocsc(), rhs.ravel()).reshape(n, n)
            q_new = q + tau * conduction_divergence(theta_k, cond)
            resid = eos_mod.thermal_energy(rho_new, np.maximum(theta_k, 0.0), coeffs.f, eos) - q_new
            if np.all(q_new >= 0.0) and (
                sweep > 0 or np.max(np.abs(resid)) <= 1e-3 * max(float(np.max(q_new)), 1e-300)
            ):
                break
        if np.any(q_new < 0.0):
            lost = float(-np.sum(np.minimum(q_new, 0.0)))
            logger.warning("conduction produced negative thermal energy (%.3e clipped)", lost)
            q_new = np.maximum(q_new, 0.0)
        q = q_new
    theta = sink_solve(rho_new, q, coeffs.f, eos, xi, tau, theta_guess=state.theta)
    q_final = eos_mod.thermal_energy(rho_new, theta, coeffs.f, eos)
    dead = (rho_new <= 0.0) & (eos.a * coeffs.f <= 0.0)
    q_final = np.where(dead, q, q_final)
    sink = q - q_final
    return q_final, theta, sink


# ---------------------------------------------------------------------------
# Full substep
# ---------------------------------------------------------------------------


def _face_gradient_squared(theta: np.ndarray, h: float) -> np.ndarray:
    """Squared face-difference gradient of the conduction stencil, averaged onto cells."""
    gx2 = ((theta[1:, :] - theta[:-1, :]) / h) ** 2
    gy2 = ((theta[:, 1:] - theta[:, :-1]) / h) ** 2
    grad2 = np.zeros_like(theta)
    grad2[:-1, :] += 0.5 * gx2
    grad2[1:, :] += 0.5 * gx2
    grad2[:, :-1] += 0.5 * gy2
    grad2[:, 1:] += 0.5 * gy2
    return grad2


def entropy_production_density(
    u: np.ndarray, theta: np.ndarray, coeffs: Coefficients, eos: EosParams, h: float,
    heating: np.ndarray | None = None,
) -> np.ndarray:
    """Cell values of ``(1/theta)(S : grad u + kappa |grad theta|^2 / theta)``.

    The temperature gradient is the face-difference gradient of the
    conduction stencil, squared and averaged onto cells.  Cells with zero
    temperature contribute zero.
    """
    if heating is None:
        _, heating = viscous_force(u, theta, coeffs.g, eos, h)
    _, _, kappa = eos_mod.transport_coeffs(theta, coeffs.g, coeffs.h, eos)
    grad2 = _face_gradient_squared(theta, h)
    pos = theta > 0.0
    safe = np.where(pos, theta, 1.0)
    return np.where(pos, (heating + kappa * grad2 / safe) / safe, 0.0)


def exterior_flux_density(u: np.ndarray, theta: np.ndarray, coeffs: Coefficients, eos: EosParams,
                          h: float) -> np.ndarray:
    """Cell values of ``|S| + kappa |grad theta| / theta``.

    These are the viscous stress and the entropy flux, the two fluxes whose
    exterior contributions to the weak formulation vanish as the exterior
    weights go to zero.  ``|S|`` is the Frobenius norm.  Cells with zero
    temperature contribute only their stress.
    """
    S = eos_mod.stress(theta, velocity_gradient(u, h), coeffs.g, eos)
    stress_norm = np.sqrt(np.sum(S * S, axis=(-2, -1)))
    _, _, kappa = eos_mod.transport_coeffs(theta, coeffs.g, coeffs.h, eos)
    pos = theta > 0.0
    flux = np.where(pos, kappa * np.sqrt(_face_gradient_squared(theta, h)) / np.where(pos, theta, 1.0), 0.0)
    return stress_norm + flux


def fluid_substep(
    state: FluidState,
    coeffs: Coefficients,
    eos: EosParams,
    tau: float,
    xi: float,
    penalty: PenaltyTarget | None = None,
    exterior: np.ndarray | None = None,
) -> tuple[FluidState, SubstepReport]:
    """Advance every fluid field by ``tau``.

    Args:
        state: Current state.
        coeffs: Extended coefficient fields for this substep.
        eos: Constitutive parameters (with the ladder's ``delta``).
        tau: Substep length.
        xi: Sink weight.
        penalty: Marker penalty data, or ``None``.
        exterior: Boolean mask of cells outside the deformed domain, for the
            exterior flux, production and sink totals.

    Returns:
        The new state and the integrated substep diagnostics.
    """
    grid = state.grid
    h = grid.h
    u = state.velocity()
    faces = face_velocities(u)
    rho_new = np.maximum(transport_step(state.rho, faces, tau, h), 0.0)
    b_new = np.maximum(transport_step(state.b, faces, tau, h), 0.0)
    mom_new, heating = momentum_step(state, rho_new, b_new, coeffs, eos, tau, penalty, u=u)
    production = entropy_production_density(u, state.theta, coeffs, eos, h, heating)
    ext_flux = exterior_flux_density(u, state.theta, coeffs, eos, h) if exterior is not None else None
    qth_new, theta_new, sink = thermal_step(state, rho_new, coeffs, eos, tau, xi, u=u, heating=heating)
    new = replace(state, rho=rho_new, b=b_new, mom=mom_new, qth=qth_new, theta=theta_new, t=state.t + tau)
    if exterior is None:
        exterior = np.zeros_like(rho_new, dtype=bool)
    cell = h * h
    trace = None
    if penalty is not None:
        u_m = sample_kernel(new.velocity(), penalty.kernel)
        trace = np.sum(u_m * penalty.normals, axis=1)
    report = SubstepReport(
        dissipation=tau * cell * float(production.sum()),
        exterior_dissipation=tau * cell * float(ext_flux[exterior].sum()) if ext_flux is not None else 0.0,
        exterior_production=tau * cell * float(production[exterior].sum()),
        sink=cell * float(sink.sum()),
        exterior_sink=cell * float(sink[exterior].sum()),
        trace=trace,
    )
    return new, report


def make_state(rho, b, mom, theta, coeffs: Coefficients, eos: EosParams, grid: Grid,
               eps_v: float, t: float = 0.0) -> FluidState:
    """Assemble a fluid state from primitive fields, computing ``q_th``."""
    rho = np.asarray(rho, dtype=float)
    theta = np.broadcast_to(np.asarray(theta, dtype=float), rho.shape).copy()
    qth = eos_mod.thermal_energy(rho, theta, coeffs.f, eos)
    return FluidState(
        rho=rho.copy(), b=np.asarray(b, dtype=float).copy(), mom=np.asarray(mom, dtype=float).copy(),
        qth=qth, theta=theta, t=t, grid=grid, eps_v=eps_v,
    )
