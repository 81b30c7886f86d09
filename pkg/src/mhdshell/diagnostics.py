"""Run-time monitors: energy ledger, conservation, interface mismatch, degeneracy.

All fluid integrals use midpoint quadrature (cell sums times ``h^2``).  Shell
integrals are means over the uniform torus nodes, which equal the Parseval
sums because the torus has unit length.  Interface integrals over the
reference circle use arclength weights ``2 pi R0 / N_s``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .constitutive import EosParams
from .fluid import FluidState, bilinear_sample
from .geometry import (
    GeometryConfig,
    InterfaceMarkers,
    TrigInterpolant,
    deformed_points,
    exterior_distance,
    injectivity_margin,
    surface_element,
)
from .shell import ShellState, shell_dissipation_rate, shell_energy

logger = logging.getLogger(__name__)


def monitor_exponents(gamma: float, p: float = 20.0) -> tuple[float, float]:
    """Higher-integrability exponents ``(theta1, theta2)``.

    ``theta1 = min((gamma-1)/2 - gamma/p, gamma/4)`` and
    ``theta2 = min((gamma-1)/gamma - 2/p, 1/2)``.

    Raises:
        ValueError: If either exponent is not positive.
    """
    t1 = min((gamma - 1.0) / 2.0 - gamma / p, gamma / 4.0)
    t2 = min((gamma - 1.0) / gamma - 2.0 / p, 0.5)
    if t1 <= 0.0 or t2 <= 0.0:
        raise ValueError(f"monitor exponents must be positive (gamma={gamma}, p={p})")
    return t1, t2


def conservation_totals(state: FluidState) -> tuple[float, float]:
    """Total mass and magnetic flux, ``(sum rho h^2, sum b h^2)``."""
    cell = state.grid.h ** 2
    return float(np.sum(state.rho)) * cell, float(np.sum(state.b)) * cell


def resample_periodic(samples: np.ndarray, count: int) -> np.ndarray:
    """Values of the trigonometric interpolant of ``samples`` at ``count`` uniform nodes."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == count:
        return samples
    return TrigInterpolant(samples)(np.arange(count) / count)


def interface_mismatch(state: FluidState, shell: ShellState, geometry: GeometryConfig,
                       markers: InterfaceMarkers | None = None) -> float:
    """Weighted squared mismatch ``sum_j |u(phi_w(y_j)) - w_t(y_j) n(y_j)|^2 ds_j``.

    The fluid velocity is sampled bilinearly at the deformed markers and the
    shell data are interpolated to the marker positions.
    """
    if markers is None:
        markers = InterfaceMarkers(shell.n, geometry.radius)
    w = resample_periodic(shell.w, markers.count)
    v = resample_periodic(shell.v, markers.count)
    pts = deformed_points(markers.positions, w, geometry)
    u = bilinear_sample(state.velocity(), pts, state.grid).T
    diff = u - v[:, None] * markers.normals
    return float(np.sum(markers.weights * np.sum(diff * diff, axis=1)))


class DegeneracyReport(NamedTuple):
    """Distance of the shell configuration from degeneracy.

    Attributes:
        lower_margin: ``min_j (w_j - alpha)``.
        upper_margin: ``min_j (beta - w_j)``.
        sigma_min: Smallest surface element at the nodes.
        injectivity: Smallest radial stretch of the flow map.
        halt: True if any of the four quantities is not positive.
    """

    lower_margin: float
    upper_margin: float
    sigma_min: float
    injectivity: float
    halt: bool

    @property
    def reason(self) -> str:
        """Human-readable cause of a halt (empty when not halting)."""
        causes = []
        if not self.lower_margin > 0.0:
            causes.append("lower displacement bound reached")
        if not self.upper_margin > 0.0:
            causes.append("upper displacement bound reached")
        if not self.sigma_min > 0.0:
            causes.append("surface element vanished")
        if not self.injectivity > 0.0:
            causes.append("flow map lost injectivity")
        return "; ".join(causes)


def degeneracy_check(shell: ShellState | np.ndarray, geometry: GeometryConfig) -> DegeneracyReport:
    """Margins to the displacement bounds, surface element and injectivity.

    A halt is a returned value, never an exception.
    """
    w = np.asarray(getattr(shell, "w", shell), dtype=float)
    lower = float(np.min(w - geometry.alpha))
    upper = float(np.min(geometry.beta - w))
    inj = injectivity_margin(w, geometry)
    y = np.arange(w.size) / w.size
    with np.errstate(all="ignore"):
        sigma = surface_element(0.0, y, w, geometry)
    sigma_min = float(np.min(sigma)) if np.all(np.isfinite(sigma)) else -math.inf
    halt = not (lower > 0.0 and upper > 0.0 and sigma_min > 0.0 and inj > 0.0)
    return DegeneracyReport(lower, upper, sigma_min, inj, halt)


def leakage(state: FluidState, shell: ShellState | np.ndarray, geometry: GeometryConfig,
            band_cells: float = 4.0) -> float:
    """Fraction of the mass farther than ``band_cells`` cells outside the deformed boundary."""
    total = float(np.sum(state.rho))
    if total <= 0.0:
        return 0.0
    dist = exterior_distance(state.grid.points, shell, geometry)
    return float(np.sum(state.rho[dist > band_cells * state.grid.h])) / total


@dataclass
class Cumulative:
    """Time-integrated ledger columns, non-decreasing by construction."""

    shell_dissipation: float = 0.0
    fluid_dissipation: float = 0.0
    exterior_dissipation: float = 0.0
    exterior_production: float = 0.0
    sink: float = 0.0
    exterior_sink: float = 0.0
    mismatch_integral: float = 0.0
    fluid_steps: int = 0

    def copy(self) -> "Cumulative":
        """Independent copy."""
        return Cumulative(**asdict(self))


@dataclass(frozen=True)
class LedgerRecord:
    """One row of the energy ledger; field order is the CSV column order."""

    time: float
    kinetic: float
    magnetic: float
    internal: float
    artificial: float
    shell_kinetic: float
    shell_bending: float
    shell_inertial: float
    shell_thermal: float
    penalty_memory: float
    total: float
    shell_dissipation: float
    fluid_dissipation: float
    exterior_dissipation: float
    exterior_production: float
    sink: float
    exterior_sink: float
    balance: float
    mass: float
    magnetic_total: float
    mismatch: float
    mismatch_integral: float
    rho_integrability: float
    b_integrability: float
    lower_margin: float
    upper_margin: float
    sigma_min: float
    injectivity: float
    leakage: float
    fluid_steps: int


LEDGER_COLUMNS: tuple[str, ...] = tuple(f.name for f in fields(LedgerRecord))


def fluid_energy(state: FluidState, eos: EosParams) -> tuple[float, float, float, float]:
    """Fluid energy columns ``(kinetic, magnetic, internal, artificial)``.

    ``internal`` is ``int rho e = int rho^gamma/(gamma-1) + q_th`` and
    ``artificial`` is ``delta/(beta-1) int (rho+b)^beta``.
    """
    cell = state.grid.h ** 2
    u = state.velocity()
    kinetic = 0.5 * float(np.sum(state.mom * u)) * cell
    magnetic = 0.5 * float(np.sum(state.b ** 2)) * cell
    internal = (float(np.sum(state.rho ** eos.gamma)) / (eos.gamma - 1.0) + float(np.sum(state.qth))) * cell
    artificial = eos.delta / (eos.beta - 1.0) * float(np.sum((state.rho + state.b) ** eos.beta)) * cell
    return kinetic, magnetic, internal, artificial


def total_energy(
    time: float,
    fluid: FluidState,
    shell: ShellState,
    eos: EosParams,
    geometry: GeometryConfig,
    *,
    delta: float,
    alpha2: float,
    theta_weight: float = 1.0,
    trace: np.ndarray | None = None,
    cumulative: Cumulative | None = None,
    markers: InterfaceMarkers | None = None,
    leak_band_cells: float = 4.0,
    monitor_p: float = 20.0,
) -> LedgerRecord:
    """Evaluate every ledger column for the given states.

    Args:
        time: Record time.
        fluid: Fluid state.
        shell: Shell state.
        eos: Constitutive parameters (``delta`` enters the artificial pressure).
        geometry: Geometry configuration.
        delta: Penalty weight; the shell kinetic energy carries ``(1-delta)/2``.
        alpha2: Rotational inertia.
        theta_weight: Weight of ``||theta||^2`` in the structure energy.
        trace: Buffered fluid normal trace; contributes
            ``delta/2 sum_j ds_j trace_j^2`` (the energy held by the time shift).
        cumulative: Time-integrated columns so far.
        markers: Interface markers (defaults to one per shell node).
        leak_band_cells: Band width for the leakage column.
        monitor_p: Integrability parameter ``p`` of the monitor exponents.

    Returns:
        The ledger record.
    """
    if cumulative is None:
        cumulative = Cumulative()
    if markers is None:
        markers = InterfaceMarkers(shell.n, geometry.radius)
    kin, mag, internal, artificial = fluid_energy(fluid, eos)
    se = shell_energy(shell, alpha2, theta_weight=theta_weight)
    shell_kin = (1.0 - delta) * se.kinetic
    memory = 0.0
    if trace is not None:
        tr = resample_periodic(trace, markers.count)
        memory = 0.5 * delta * float(np.sum(markers.weights * tr * tr))
    total = kin + mag + internal + artificial + shell_kin + se.bending + se.inertial_gradient + se.thermal + memory
    mass, mag_total = conservation_totals(fluid)
    cell = fluid.grid.h ** 2
    t1, t2 = monitor_exponents(eos.gamma, monitor_p)
    deg = degeneracy_check(shell, geometry)
    try:
        mismatch = interface_mismatch(fluid, shell, geometry, markers)
    except ValueError:
        mismatch = math.nan
    return LedgerRecord(
        time=time,
        kinetic=kin,
        magnetic=mag,
        internal=internal,
        artificial=artificial,
        shell_kinetic=shell_kin,
        shell_bending=se.bending,
        shell_inertial=se.inertial_gradient,
        shell_thermal=se.thermal,
        penalty_memory=memory,
        total=total,
        shell_dissipation=cumulative.shell_dissipation,
        fluid_dissipation=cumulative.fluid_dissipation,
        exterior_dissipation=cumulative.exterior_dissipation,
        exterior_production=cumulative.exterior_production,
        sink=cumulative.sink,
        exterior_sink=cumulative.exterior_sink,
        balance=total + cumulative.shell_dissipation + cumulative.sink,
        mass=mass,
        magnetic_total=mag_total,
        mismatch=mismatch,
        mismatch_integral=cumulative.mismatch_integral,
        rho_integrability=float(np.sum(fluid.rho ** (eos.gamma + t1))) * cell,
        b_integrability=float(np.sum(fluid.b ** (2.0 + t2))) * cell,
        lower_margin=deg.lower_margin,
        upper_margin=deg.upper_margin,
        sigma_min=deg.sigma_min,
        injectivity=deg.injectivity,
        leakage=leakage(fluid, shell, geometry, leak_band_cells),
        fluid_steps=cumulative.fluid_steps,
    )


def shell_dissipation_increment(shell: ShellState, alpha1: float, tau: float) -> float:
    """Backward-Euler dissipation of one shell substep, ``tau (alpha1 |grad v|^2 + |grad theta|^2)``."""
    return tau * shell_dissipation_rate(shell, alpha1)


@dataclass
class EnergyLedger:
    """Ordered collection of ledger records with CSV input and output."""

    records: list[LedgerRecord] = field(default_factory=list)

    def append(self, record: LedgerRecord) -> None:
        """Add a record."""
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        """One column as an array."""
        if name not in LEDGER_COLUMNS:
            raise KeyError(name)
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def write_csv(self, path: str | Path) -> Path:
        """Write every record with a header row; floats use ``repr`` (round-trip exact)."""
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(LEDGER_COLUMNS)
            for rec in self.records:
                writer.writerow([repr(getattr(rec, c)) for c in LEDGER_COLUMNS])
        return path

    @classmethod
    def read_csv(cls, path: str | Path) -> "EnergyLedger":
        """Read a ledger written by :meth:`write_csv`.

        Raises:
            ValueError: If the header does not match the column order.
        """
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = tuple(next(reader))
            if header != LEDGER_COLUMNS:
                raise ValueError("ledger header does not match the expected columns")
            recs = []
            for row in reader:
                vals = {c: float(v) for c, v in zip(LEDGER_COLUMNS, row)}
                vals["fluid_steps"] = int(vals["fluid_steps"])
                recs.append(LedgerRecord(**vals))
        return cls(recs)

    def energy_inequality_slack(self) -> float:
        """``max_t balance(t) / total(0) - 1`` over the records."""
        bal = self.column("balance")
        return float(np.max(bal) / bal[0] - 1.0) if len(bal) and bal[0] > 0.0 else 0.0

    def energy_defect(self) -> float:
        """``max_t |balance(t) / total(0) - 1|``, the two-sided energy-balance defect.

        Unlike :meth:`energy_inequality_slack` this also counts energy lost to
        numerical dissipation, so it measures how far the discrete balance is
        from the exact one and shrinks as the scheme converges.
        """
        bal = self.column("balance")
        return float(np.max(np.abs(bal / bal[0] - 1.0))) if len(bal) and bal[0] > 0.0 else 0.0

    def monotone(self, name: str, rtol: float = 0.0) -> bool:
        """True if a column never decreases (up to ``rtol`` of its magnitude)."""
        col = self.column(name)
        if col.size < 2:
            return True
        tol = rtol * float(np.max(np.abs(col)))
        return bool(np.all(np.diff(col) >= -tol))


def log_log_slope(x: Iterable[float], y: Iterable[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``; NaN if undefined."""
    x = np.asarray(list(x), dtype=float)
    y = np.asarray(list(y), dtype=float)
    ok = (x > 0.0) & (y > 0.0) & np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])
