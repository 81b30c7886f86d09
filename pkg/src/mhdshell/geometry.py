"""Reference circle, cutoff, flow map and extended coefficient fields.

The reference domain is the disk of radius ``R0`` centred at the origin, with
boundary parameterised over the unit torus by
``phi(y) = R0 (cos 2 pi y, sin 2 pi y)``.  The shell displaces this boundary
along its outward normal.  Points inside the box ``B`` are carried along by
the flow map ``x + f(d(x)) w(y(x)) n(y(x))``, where ``d`` is the signed
distance to the reference circle and ``f`` is a compactly supported cutoff.
For a circle every such map is a radial shift, so both the forward and the
inverse map act independently along each ray.

Displacements are passed either as a shell state (anything with a ``w``
attribute) or as a plain array of samples at the uniform torus nodes.  Off
the nodes they are evaluated by trigonometric interpolation, which is exact
for the band-limited data the spectral shell solver produces.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, DegeneracyError, DegeneratePointError, InverseMapError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

#: Newton tolerance of the inverse map, relative to ``R0``.
INVERSE_TOL = 1e-10
#: Newton iteration cap of the inverse map.
INVERSE_MAX_ITER = 50
#: Finite-difference step of the Jacobian, relative to ``R0``.
JACOBIAN_STEP = 1e-6


@dataclass(frozen=True)
class GeometryConfig:
    """Reference circle, cutoff breakpoints and admissible displacements.

    Attributes:
        radius: Reference circle radius ``R0``.
        m2: Outer lower cutoff breakpoint ``m''`` (cutoff vanishes below).
        m1: Inner lower breakpoint ``m'`` (cutoff equals one above).
        M1: Inner upper breakpoint ``M'`` (cutoff equals one below).
        M2: Outer upper breakpoint ``M''`` (cutoff vanishes above).
        alpha: Lower admissible displacement ``alpha_dOmega``.
        beta: Upper admissible displacement ``beta_dOmega``.
        box_halfwidth: Half-width ``M0`` of the square computational box.
    """

    radius: float = 1.0
    m2: float = -0.48
    m1: float = -0.02
    M1: float = 0.02
    M2: float = 0.48
    alpha: float = -0.5
    beta: float = 0.5
    box_halfwidth: float = 2.0

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ConfigError("geometry.radius must be positive")
        if not (self.m2 < self.m1 < 0.0 < self.M1 < self.M2):
            raise ConfigError("cutoff breakpoints must satisfy m2 < m1 < 0 < M1 < M2")
        if not (self.alpha < self.m2 and self.M2 < self.beta):
            raise ConfigError("displacement bounds must satisfy alpha < m2 and M2 < beta")
        if not self.alpha > -self.radius:
            raise ConfigError("alpha must exceed -radius (tubular neighbourhood of a circle)")
        if not self.box_halfwidth > self.radius + self.beta:
            raise ConfigError("box_halfwidth must exceed radius + beta")

    def check_box(self, kernel_width: float) -> None:
        """Check that displaced boundaries plus the kernel stay inside ``B``.

        Args:
            kernel_width: Support half-width of the marker kernel.

        Raises:
            ConfigError: If ``M0 < R0 + beta + kernel_width``.
        """
        if self.box_halfwidth < self.radius + self.beta + kernel_width:
            raise ConfigError(
                "box_halfwidth must be at least radius + beta + kernel half-width"
            )


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on the square ``[-M0, M0]^2``.

    Arrays on the grid have shape ``(n, n)`` and are indexed ``[ix, iy]``.
    """

    n: int
    halfwidth: float

    @property
    def h(self) -> float:
        """Cell width."""
        return 2.0 * self.halfwidth / self.n

    @cached_property
    def axis(self) -> np.ndarray:
        """Cell-centre coordinates along one axis."""
        return -self.halfwidth + (np.arange(self.n) + 0.5) * self.h

    @cached_property
    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinate arrays ``(X, Y)``."""
        return np.meshgrid(self.axis, self.axis, indexing="ij")

    @cached_property
    def points(self) -> np.ndarray:
        """Cell centres stacked as an ``(n, n, 2)`` array."""
        X, Y = self.centers
        return np.stack([X, Y], axis=-1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        """Boolean mask of the outermost ring of cells."""
        mask = np.zeros((self.n, self.n), dtype=bool)
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = True
        return mask


@dataclass(frozen=True)
class InterfaceMarkers:
    """Uniform Lagrangian markers on the torus and their reference data.

    Attributes:
        count: Number of markers ``N_s``.
        radius: Reference radius ``R0``.
    """

    count: int
    radius: float

    @cached_property
    def positions(self) -> np.ndarray:
        """Torus coordinates ``y_j = j / N_s``."""
        return np.arange(self.count) / self.count

    @cached_property
    def points(self) -> np.ndarray:
        """Reference boundary points ``phi(y_j)`` as ``(N_s, 2)``."""
        return boundary_point(self.positions, self.radius)

    @cached_property
    def normals(self) -> np.ndarray:
        """Outward unit normals ``n(y_j)`` as ``(N_s, 2)``."""
        return boundary_normal(self.positions)

    @cached_property
    def weights(self) -> np.ndarray:
        """Arclength weights, summing to ``2 pi R0``."""
        return np.full(self.count, TWO_PI * self.radius / self.count)


def boundary_point(y: np.ndarray | float, radius: float) -> np.ndarray:
    """Reference parameterisation ``phi(y) = R0 (cos 2 pi y, sin 2 pi y)``."""
    y = np.asarray(y, dtype=float)
    return radius * np.stack([np.cos(TWO_PI * y), np.sin(TWO_PI * y)], axis=-1)


def boundary_normal(y: np.ndarray | float) -> np.ndarray:
    """Outward unit normal of the reference circle at torus coordinate ``y``."""
    y = np.asarray(y, dtype=float)
    return np.stack([np.cos(TWO_PI * y), np.sin(TWO_PI * y)], axis=-1)


def torus_coordinate(x: np.ndarray) -> np.ndarray:
    """Torus coordinate ``phi^{-1}(pi(x))`` in ``[0, 1)`` of points ``x``."""
    x = np.asarray(x, dtype=float)
    return np.mod(np.arctan2(x[..., 1], x[..., 0]) / TWO_PI, 1.0)


def signed_distance(x: np.ndarray, radius: float) -> np.ndarray | float:
    """Signed distance to the reference circle, negative inside.

    Args:
        x: Point or array of points with trailing dimension 2.
        radius: Reference radius ``R0``.

    Returns:
        ``|x| - R0`` with the shape of ``x`` minus its last axis.
    """
    x = np.asarray(x, dtype=float)
    d = np.hypot(x[..., 0], x[..., 1]) - radius
    return float(d) if d.ndim == 0 else d


def project(x: np.ndarray, radius: float) -> np.ndarray:
    """Closest point on the reference circle.

    Raises:
        DegeneratePointError: If any point is the origin.
    """
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[..., 0], x[..., 1])
    if np.any(r == 0.0):
        raise DegeneratePointError("projection onto the circle is undefined at the origin")
    return radius * x / r[..., None]


def cutoff(d: np.ndarray | float, cfg: GeometryConfig) -> np.ndarray | float:
    """C^1 cutoff equal to one on ``[m', M']`` and zero outside ``(m'', M'')``.

    Each ramp is the cubic Hermite smoothstep ``3s^2 - 2s^3`` in the ramp
    coordinate ``s``, so values and first derivatives match at every junction.
    """
    d = np.asarray(d, dtype=float)
    lo = np.clip((d - cfg.m2) / (cfg.m1 - cfg.m2), 0.0, 1.0)
    hi = np.clip((cfg.M2 - d) / (cfg.M2 - cfg.M1), 0.0, 1.0)
    out = np.where(d < 0.0, lo * lo * (3.0 - 2.0 * lo), hi * hi * (3.0 - 2.0 * hi))
    return float(out) if out.ndim == 0 else out


def cutoff_derivative(d: np.ndarray | float, cfg: GeometryConfig) -> np.ndarray | float:
    """Derivative of :func:`cutoff` with respect to ``d``."""
    d = np.asarray(d, dtype=float)
    wl = cfg.m1 - cfg.m2
    wu = cfg.M2 - cfg.M1
    lo = np.clip((d - cfg.m2) / wl, 0.0, 1.0)
    hi = np.clip((cfg.M2 - d) / wu, 0.0, 1.0)
    out = np.where(d < 0.0, 6.0 * lo * (1.0 - lo) / wl, -6.0 * hi * (1.0 - hi) / wu)
    return float(out) if out.ndim == 0 else out


def injectivity_margin(w: np.ndarray, cfg: GeometryConfig) -> float:
    """Smallest radial stretch ``1 + f'(d) w`` over all rays and distances.

    The radial map ``r -> r + f(r - R0) w`` is injective exactly when this
    quantity stays positive.  The smoothstep slope peaks at the ramp
    midpoints with value ``1.5 / width``.
    """
    w = _samples(w)
    slope_lo = 1.5 / (cfg.m1 - cfg.m2)
    slope_hi = 1.5 / (cfg.M2 - cfg.M1)
    worst = np.minimum(1.0 + slope_lo * np.minimum(w, 0.0), 1.0 - slope_hi * np.maximum(w, 0.0))
    return float(np.min(worst))


class TrigInterpolant:
    """Trigonometric interpolant of periodic samples on the unit torus.

    Args:
        samples: Values at ``y_j = j / N`` for ``j = 0 .. N-1``.
    """

    def __init__(self, samples: np.ndarray) -> None:
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        coef = np.fft.rfft(samples) / n
        scale = np.full(coef.size, 2.0)
        scale[0] = 1.0
        if n % 2 == 0:
            scale[-1] = 1.0
        self._coef = coef * scale
        self._k = np.arange(coef.size)
        self.n = n

    def __call__(self, y: np.ndarray | float) -> np.ndarray:
        """Interpolated values at torus coordinates ``y``."""
        phase = np.exp(1j * TWO_PI * np.multiply.outer(np.asarray(y, dtype=float), self._k))
        return np.real(phase @ self._coef)

    def derivative(self, y: np.ndarray | float) -> np.ndarray:
        """Derivative with respect to the torus coordinate at ``y``."""
        phase = np.exp(1j * TWO_PI * np.multiply.outer(np.asarray(y, dtype=float), self._k))
        return np.real(phase @ (1j * TWO_PI * self._k * self._coef))


def _samples(w) -> np.ndarray:
    """Displacement samples from a shell state or a raw array."""
    return np.asarray(getattr(w, "w", w), dtype=float)


def _displacement_at(x: np.ndarray, w) -> np.ndarray:
    """Displacement evaluated on the ray through each point of ``x``."""
    samples = _samples(w)
    if np.all(samples == samples.flat[0]):
        return np.full(np.shape(x)[:-1], float(samples.flat[0]))
    return TrigInterpolant(samples)(torus_coordinate(x))


def flow_map(t: float, x: np.ndarray, w, cfg: GeometryConfig) -> np.ndarray:
    """Push points of the reference configuration to the deformed one.

    Args:
        t: Time (the displacement already refers to it; kept for symmetry).
        x: Point or array of points with trailing dimension 2.
        w: Shell state or displacement samples.
        cfg: Geometry configuration.

    Returns:
        ``x + f(d(x)) w(y(x)) n(y(x))``, the identity where the cutoff vanishes.
    """
    del t
    x = np.asarray(x, dtype=float)
    r = np.hypot(x[..., 0], x[..., 1])
    f = cutoff(r - cfg.radius, cfg)
    if np.any((r == 0.0) & (np.asarray(f) != 0.0)):
        raise DegeneratePointError("flow map needs a projection at the origin")
    shift = np.asarray(f) * _displacement_at(x, w)
    safe_r = np.where(r > 0.0, r, 1.0)
    return x + (shift / safe_r)[..., None] * x


def inverse_flow_map(t: float, z: np.ndarray, w, cfg: GeometryConfig) -> np.ndarray:
    """Invert :func:`flow_map` by Newton iteration along each ray.

    Raises:
        InverseMapError: If some point has not converged after 50 iterations.
    """
    del t
    z = np.asarray(z, dtype=float)
    rho = np.hypot(z[..., 0], z[..., 1])
    W = _displacement_at(z, w)
    r = radial_preimage(rho, W, cfg)
    safe_rho = np.where(rho > 0.0, rho, 1.0)
    return z * (np.where(rho > 0.0, r / safe_rho, 1.0))[..., None]


def radial_preimage(rho: np.ndarray, W: np.ndarray, cfg: GeometryConfig) -> np.ndarray:
    """Solve ``r + f(r - R0) W = rho`` for ``r`` ray by ray.

    Newton steps are safeguarded by a bracket ``[rho - max(W,0), rho - min(W,0)]``
    which always contains the root because ``0 <= f <= 1``.
    """
    rho = np.asarray(rho, dtype=float)
    W = np.broadcast_to(np.asarray(W, dtype=float), rho.shape)
    lo = np.maximum(rho - np.maximum(W, 0.0), 0.0)
    hi = rho - np.minimum(W, 0.0)
    r = rho.copy()
    tol = INVERSE_TOL * cfg.radius * 1e-3
    for _ in range(INVERSE_MAX_ITER):
        d = r - cfg.radius
        F = r + cutoff(d, cfg) * W - rho
        if np.all(np.abs(F) <= tol):
            return r
        lo = np.where(F < 0.0, r, lo)
        hi = np.where(F > 0.0, r, hi)
        dF = 1.0 + cutoff_derivative(d, cfg) * W
        step = np.where(dF > 0.0, F / np.where(dF > 0.0, dF, 1.0), 0.0)
        cand = r - step
        bad = (dF <= 0.0) | (cand <= lo) | (cand >= hi)
        r = np.where(bad, 0.5 * (lo + hi), cand)
    F = r + cutoff(r - cfg.radius, cfg) * W - rho
    if np.all(np.abs(F) <= INVERSE_TOL * cfg.radius):
        return r
    raise InverseMapError(
        f"inverse flow map did not converge in {INVERSE_MAX_ITER} iterations "
        f"(max residual {np.max(np.abs(F)):.3e})"
    )


def deformation_gradient(t: float, y: np.ndarray, w, cfg: GeometryConfig) -> np.ndarray:
    """Centred finite-difference Jacobian of the flow map at ``phi(y)``.

    Returns:
        Array of shape ``y.shape + (2, 2)`` with ``J[..., i, j] = d x_i / d X_j``.
    """
    X = boundary_point(y, cfg.radius)
    step = JACOBIAN_STEP * cfg.radius
    cols = []
    for j in range(2):
        e = np.zeros(2)
        e[j] = step
        cols.append((flow_map(t, X + e, w, cfg) - flow_map(t, X - e, w, cfg)) / (2.0 * step))
    return np.stack(cols, axis=-1)


def _cofactor_normal(J: np.ndarray, n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``det J`` and ``J^{-T} n`` for batched 2x2 matrices."""
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    # J^{-T} = cof(J) / det with cof = [[d, -c], [-b, a]].
    cx = J[..., 1, 1] * n[..., 0] - J[..., 1, 0] * n[..., 1]
    cy = -J[..., 0, 1] * n[..., 0] + J[..., 0, 0] * n[..., 1]
    safe = np.where(det != 0.0, det, 1.0)
    return det, np.stack([cx / safe, cy / safe], axis=-1)


def surface_element(t: float, y: np.ndarray | float, w, cfg: GeometryConfig) -> np.ndarray:
    """Surface element ``det(grad phi_w) |grad phi_w^{-T} n|`` without a sign check."""
    y = np.asarray(y, dtype=float)
    J = deformation_gradient(t, y, w, cfg)
    det, m = _cofactor_normal(J, boundary_normal(y))
    return det * np.hypot(m[..., 0], m[..., 1])


def jacobian_sigma(t: float, y: np.ndarray | float, w, cfg: GeometryConfig) -> np.ndarray | float:
    """Surface element ``sigma_w = det(grad phi_w) |grad phi_w^{-T} n|``.

    Raises:
        DegeneracyError: If any computed value is not positive.
    """
    sigma = np.asarray(surface_element(t, y, w, cfg))
    if np.any(~(sigma > 0.0)):
        raise DegeneracyError(f"surface element non-positive (min {np.min(sigma):.3e})")
    return float(sigma) if sigma.ndim == 0 else sigma


def deformed_normal(t: float, y: np.ndarray, w, cfg: GeometryConfig) -> np.ndarray:
    """Unit outward normal of the deformed boundary at ``phi_w(y)``."""
    y = np.asarray(y, dtype=float)
    J = deformation_gradient(t, y, w, cfg)
    _, m = _cofactor_normal(J, boundary_normal(y))
    return m / np.hypot(m[..., 0], m[..., 1])[..., None]


def deformed_points(y: np.ndarray, w, cfg: GeometryConfig) -> np.ndarray:
    """Deformed boundary points ``phi(y) + w(y) n(y)`` at torus nodes ``y``.

    ``w`` must be sampled at the same nodes as ``y``.
    """
    return boundary_point(y, cfg.radius) + _samples(w)[..., None] * boundary_normal(y)


def inside(t: float, x: np.ndarray, w, cfg: GeometryConfig) -> np.ndarray | bool:
    """Membership test for the deformed domain ``Omega_w(t)``."""
    y = inverse_flow_map(t, x, w, cfg)
    res = np.hypot(y[..., 0], y[..., 1]) < cfg.radius
    return bool(res) if np.ndim(res) == 0 else res


def exterior_distance(x: np.ndarray, w, cfg: GeometryConfig) -> np.ndarray:
    """Radial distance outside the deformed boundary (negative inside)."""
    x = np.asarray(x, dtype=float)
    return np.hypot(x[..., 0], x[..., 1]) - (cfg.radius + _displacement_at(x, w))


def coefficient_fields(
    t: float,
    grid: Grid,
    w,
    omega: float,
    zeta: float,
    lam: float,
    cfg: GeometryConfig,
    band_cells: float = 3.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Extended viscosity, conductivity and radiation weights on the grid.

    ``g`` equals one inside ``Omega_w(t)`` and blends linearly in the radial
    distance to ``omega`` over ``band_cells`` cells; ``h`` and ``f`` are sharp
    indicators with exterior values ``zeta`` and ``lam``.

    Returns:
        Tuple ``(g, h, f)`` of ``(n, n)`` arrays.
    """
    for name, val in (("omega", omega), ("zeta", zeta), ("lambda", lam)):
        if not 0.0 < val <= 1.0:
            raise ValueError(f"{name} must lie in (0, 1], got {val}")
    pts = grid.points
    ins = inside(t, pts, w, cfg)
    dist = exterior_distance(pts, w, cfg)
    blend = np.clip(dist / (band_cells * grid.h), 0.0, 1.0)
    g = np.where(ins, 1.0, 1.0 - (1.0 - omega) * blend)
    h = np.where(ins, 1.0, zeta)
    f = np.where(ins, 1.0, lam)
    return g, h, f
