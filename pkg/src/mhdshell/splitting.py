"""Window-by-window operator splitting of the coupled fluid and shell problems.

Time is split into windows of length ``Dt``.  Within window ``n``:

1. the shell takes ``J`` backward-Euler substeps, penalised toward the normal
   fluid trace of window ``n-1`` (the time-shift buffer; ``v_0`` in window 0);
2. the fluid takes CFL-limited substeps over the same window.  During the
   ``j``-th shell substep interval the fluid sees the domain and extended
   coefficients of shell substep ``j`` and is penalised toward its velocity
   ``w_t n``;
3. the time-averaged normal fluid trace of the window replaces the buffer.

Degeneracy of the shell configuration ends the run cleanly with a halt reason
instead of an exception.
"""

from __future__ import annotations

import logging
import math
import time as _time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig, with_ladder
from .diagnostics import (
    Cumulative,
    EnergyLedger,
    LedgerRecord,
    degeneracy_check,
    interface_mismatch,
    log_log_slope,
    resample_periodic,
    shell_dissipation_increment,
    total_energy,
)
from .errors import DegeneracyError, MhdShellError
from .fluid import (
    Coefficients,
    FluidState,
    PenaltyTarget,
    cfl_dt,
    fluid_substep,
    interface_sample,
    kernel_matrix,
)
from .geometry import InterfaceMarkers, coefficient_fields, deformed_normal, deformed_points
from .ladder import ParameterLadder
from .shell import ShellForcing, ShellState, shell_step

logger = logging.getLogger(__name__)

HALT_COMPLETED = "completed"
HALT_DEGENERACY = "degeneracy"
HALT_STEP_LIMIT = "step-limit"


@dataclass(frozen=True)
class TimeShiftBuffer:
    """Interface data of the previous window.

    Attributes:
        trace: Normal fluid velocity at the shell nodes, time-averaged over the
            previous window (the penalty target of the shell).
        shell_velocity: Shell velocity at the end of the previous window.
        window: Index of the window that produced the contents (-1 for the
            initial data).
    """

    trace: np.ndarray
    shell_velocity: np.ndarray
    window: int = -1

    def __post_init__(self) -> None:
        for name in ("trace", "shell_velocity"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def initial(cls, v0: np.ndarray) -> "TimeShiftBuffer":
        """Buffer for the first window: both entries equal the initial shell velocity."""
        return cls(np.asarray(v0, dtype=float), np.asarray(v0, dtype=float), -1)

    def rotate(self, trace: np.ndarray, shell_velocity: np.ndarray) -> "TimeShiftBuffer":
        """Buffer holding the outputs of the window just completed."""
        return TimeShiftBuffer(trace, shell_velocity, self.window + 1)


@dataclass
class WindowReport:
    """Summary of one window."""

    index: int
    t_start: float
    t_end: float
    fluid_steps: int
    shell_trajectory: list[ShellState]
    trace: np.ndarray
    mismatch_integral: float
    record: LedgerRecord | None = None


@dataclass
class RunReport:
    """Outcome of a run.

    Attributes:
        fluid: Final fluid state.
        shell: Final shell state.
        halt_reason: ``completed``, ``degeneracy`` or ``step-limit``.
        halt_time: Time at which marching stopped.
        windows: Number of completed windows.
        ledger: Energy ledger, one record per window plus the initial record.
        ledger_path: CSV path if the ledger was written.
        checkpoint_path: Final checkpoint path if written.
        message: Detail of the halt cause.
        wall_time: Elapsed seconds.
    """

    fluid: FluidState
    shell: ShellState
    halt_reason: str
    halt_time: float
    windows: int
    ledger: EnergyLedger
    ledger_path: Path | None = None
    checkpoint_path: Path | None = None
    message: str = ""
    wall_time: float = 0.0


class Simulation:
    """Holds the coupled state and advances it window by window.

    Args:
        cfg: Validated configuration.
        fluid: Initial fluid state.
        shell: Initial shell state.
        ladder: Parameter ladder (defaults to the configuration's).
        buffer: Time-shift buffer (defaults to the initial shell velocity).
        window: Index of the next window.
        cumulative: Time-integrated ledger columns so far.

    Callables appended to ``observers`` are invoked after every fluid substep
    as ``observer(fluid_state, substep_report)``.
    """

    def __init__(
        self,
        cfg: RunConfig,
        fluid: FluidState,
        shell: ShellState,
        ladder: ParameterLadder | None = None,
        buffer: TimeShiftBuffer | None = None,
        window: int = 0,
        cumulative: Cumulative | None = None,
    ) -> None:
        self.cfg = cfg
        self.ladder = ladder or ParameterLadder.from_config(cfg)
        self.fluid = fluid
        self.shell = shell
        self.buffer = buffer or TimeShiftBuffer.initial(shell.v)
        self.window = window
        self.cumulative = cumulative or Cumulative()
        self.markers = InterfaceMarkers(cfg.n_markers, cfg.geometry.radius)
        self.ledger = EnergyLedger()
        self.penalty_scale = 2.0 * math.pi * cfg.geometry.radius
        self.halt_time = math.nan
        self.observers: list = []

    @property
    def time(self) -> float:
        """Current time (start of the next window)."""
        return self.window * self.ladder.dt

    # ------------------------------------------------------------------
    # Building blocks
    # ------------------------------------------------------------------

    def coefficients(self, shell: ShellState) -> Coefficients:
        """Extended coefficient fields for a shell configuration."""
        lad = self.ladder
        g, h, f = coefficient_fields(shell.t, self.fluid.grid, shell, lad.omega, lad.zeta, lad.lam, self.cfg.geometry)
        return Coefficients(g, h, f)

    def penalty_target(self, shell: ShellState) -> PenaltyTarget:
        """Marker kernel and target ``w_t n`` for a shell configuration."""
        m = self.markers
        w = resample_periodic(shell.w, m.count)
        v = resample_periodic(shell.v, m.count)
        pts = deformed_points(m.positions, w, self.cfg.geometry)
        kernel = kernel_matrix(pts, self.fluid.grid, self.cfg.fluid.kernel_halfwidth)
        return PenaltyTarget(kernel=kernel, target=v[:, None] * m.normals, weights=m.weights,
                             coefficient=self.ladder.penalty, normals=m.normals)

    def shell_forcing(self) -> ShellForcing:
        """Shell forcing of the coming window."""
        n = self.shell.n
        target = resample_periodic(self.buffer.trace, n)
        if not self.cfg.shell.traction_forcing:
            return ShellForcing(np.zeros(n), np.zeros(n), target)
        m = self.markers
        w = resample_periodic(self.shell.w, m.count)
        geo = self.cfg.geometry
        pts = deformed_points(m.positions, w, geo)
        nw = deformed_normal(self.shell.t, m.positions, w, geo)
        coupling = interface_sample(self.fluid, self.coefficients(self.shell), self.ladder.eos, pts, nw,
                                    m.normals, self.cfg.fluid.kernel_halfwidth)
        # Surface densities per unit arclength become per unit torus length.
        scale = self.penalty_scale
        return ShellForcing(resample_periodic(coupling.normal_force, n) * scale,
                            resample_periodic(coupling.heat_flux, n) * scale, target)

    def record(self) -> LedgerRecord:
        """Ledger record of the current state."""
        return total_energy(
            self.time, self.fluid, self.shell, self.ladder.eos, self.cfg.geometry,
            delta=self.ladder.delta, alpha2=self.ladder.alpha2, theta_weight=self.cfg.shell.theta_weight,
            trace=self.buffer.trace, cumulative=self.cumulative, markers=self.markers,
            leak_band_cells=self.cfg.leak_band_cells,
        )

    # ------------------------------------------------------------------
    # Window
    # ------------------------------------------------------------------

    def march_window(self) -> WindowReport:
        """Advance the coupled state over one window.

        Raises:
            DegeneracyError: If the shell configuration degenerates; the
                message carries the window index.  The simulation state is
                left at the start of the window.
            MhdShellError: Any fluid error, with the window index attached.
        """
        lad = self.ladder
        idx = self.window
        t0 = self.time
        J = self.cfg.shell.substeps
        tau_s = lad.dt / J
        geo = self.cfg.geometry
        forcing = self.shell_forcing()
        cum = self.cumulative.copy()

        # (i) structure substeps
        trajectory = [self.shell]
        s = self.shell
        try:
            for _ in range(J):
                s = shell_step(s, forcing, tau_s, lad.dt, lad.delta, lad.alpha1, lad.alpha2,
                               geo.alpha, geo.beta, self.penalty_scale)
                s = replace(s, t=t0 + len(trajectory) * tau_s)
                deg = degeneracy_check(s, geo)
                if deg.halt:
                    raise DegeneracyError(f"{deg.reason} at t={s.t:.6g}")
                cum.shell_dissipation += shell_dissipation_increment(s, lad.alpha1, tau_s)
                trajectory.append(s)
        except DegeneracyError as exc:
            raise DegeneracyError(f"window {idx}: {exc}", time=s.t) from None

        # (ii) fluid substeps
        fluid = self.fluid
        trace_sum = np.zeros(self.markers.count)
        mismatch_int = 0.0
        steps = 0
        max_steps = self.cfg.splitting.max_steps
        try:
            for j in range(J):
                sj = trajectory[j + 1]
                coeffs = self.coefficients(sj)
                penalty = self.penalty_target(sj)
                exterior = coeffs.h < 1.0
                t_end = t0 + (j + 1) * tau_s
                while fluid.t < t_end - 1e-12 * lad.dt:
                    tau = min(cfl_dt(fluid, coeffs, lad.eos, self.cfg.fluid.cfl, self.cfg.fluid.active_fraction),
                              t_end - fluid.t)
                    fluid, rep = fluid_substep(fluid, coeffs, lad.eos, tau, lad.xi, penalty, exterior)
                    steps += 1
                    for observer in self.observers:
                        observer(fluid, rep)
                    trace_sum += tau * rep.trace
                    cum.fluid_dissipation += rep.dissipation
                    cum.exterior_dissipation += rep.exterior_dissipation
                    cum.exterior_production += rep.exterior_production
                    cum.sink += rep.sink
                    cum.exterior_sink += rep.exterior_sink
                    mismatch_int += tau * interface_mismatch(fluid, sj, geo, self.markers)
                fluid = replace(fluid, t=t_end)
        except DegeneracyError as exc:
            raise DegeneracyError(f"window {idx}: {exc}", time=fluid.t) from exc
        except MhdShellError as exc:
            raise type(exc)(f"window {idx}: {exc}") from exc

        cum.mismatch_integral += mismatch_int
        cum.fluid_steps += steps
        trace = resample_periodic(trace_sum / lad.dt, self.shell.n)

        # (iii) commit and rotate
        self.fluid = fluid
        self.shell = trajectory[-1]
        self.buffer = self.buffer.rotate(trace, self.shell.v)
        self.cumulative = cum
        self.window += 1
        report = WindowReport(idx, t0, self.time, steps, trajectory, trace, mismatch_int)
        if max_steps and cum.fluid_steps >= max_steps:
            logger.info("step limit %d reached in window %d", max_steps, idx)
        return report

    def run(self, n_windows: int, record_every: int = 1) -> tuple[str, str]:
        """March up to ``n_windows`` windows, recording the ledger.

        Returns:
            ``(halt_reason, message)``.
        """
        if not self.ledger.records:
            self.ledger.append(self.record())
        max_steps = self.cfg.splitting.max_steps
        for k in range(n_windows):
            try:
                self.march_window()
            except DegeneracyError as exc:
                logger.warning("halting: %s", exc)
                self.halt_time = exc.time if exc.time is not None else self.time
                return HALT_DEGENERACY, str(exc)
            if (k + 1) % record_every == 0 or k + 1 == n_windows:
                self.ledger.append(self.record())
            if max_steps and self.cumulative.fluid_steps >= max_steps:
                if (k + 1) % record_every:
                    self.ledger.append(self.record())
                return HALT_STEP_LIMIT, f"{self.cumulative.fluid_steps} fluid steps"
        return HALT_COMPLETED, ""


def run(cfg: RunConfig, out_dir: str | Path | None = None, record_every: int = 1,
        restart: str | Path | None = None) -> RunReport:
    """Synthesise initial data from ``cfg`` and march ``T / Dt`` windows.

    Args:
        cfg: Validated configuration.
        out_dir: If set, the ledger CSV, configuration hash and listing, halt
            summary and a final checkpoint are written there.
        record_every: Ledger record interval in windows.
        restart: Checkpoint to continue from instead of fresh initial data;
            the run then marches the windows remaining up to ``T``.
    """
    from .checkpoint import restore_simulation, write_checkpoint
    from .initial_data import synthesize_initial_data

    start = _time.perf_counter()
    if restart is not None:
        sim = restore_simulation(cfg, restart)
    else:
        data = synthesize_initial_data(cfg)
        sim = Simulation(cfg, data.fluid, data.shell, data.ladder)
    reason, message = sim.run(max(cfg.n_windows - sim.window, 0), record_every)
    report = RunReport(
        fluid=sim.fluid, shell=sim.shell, halt_reason=reason,
        halt_time=sim.halt_time if reason == HALT_DEGENERACY else sim.time,
        windows=sim.window, ledger=sim.ledger, message=message,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.ledger_path = sim.ledger.write_csv(out / "ledger.csv")
        (out / "config.sha256").write_text(cfg.config_hash + "\n", encoding="utf-8")
        (out / "config.txt").write_text(_config_listing(cfg), encoding="utf-8")
        report.checkpoint_path = write_checkpoint(out / "final.ckpt", sim)
        (out / "halt.txt").write_text(f"{reason} t={report.halt_time!r} {message}\n", encoding="utf-8")
    report.wall_time = _time.perf_counter() - start
    logger.info("run finished: %s at t=%.6g after %d windows (%.1fs)", reason, report.halt_time,
                report.windows, report.wall_time)
    return report


def _config_listing(cfg: RunConfig) -> str:
    from .config import format_config

    return format_config(cfg)


@dataclass
class SweepEntry:
    """Outcome of one ladder setting."""

    dt: float
    xi: float
    status: str
    mismatch_integral: float = math.nan
    exterior_dissipation: float = math.nan
    exterior_production: float = math.nan
    exterior_sink: float = math.nan
    energy_slack: float = math.nan
    energy_defect: float = math.nan
    mass_drift: float = math.nan
    magnetic_drift: float = math.nan
    message: str = ""


@dataclass
class SweepReport:
    """Results of a ladder sweep with fitted log-log slopes.

    Attributes:
        entries: One entry per setting, in input order.
        mismatch_slope: Slope of the mismatch integral against ``Dt``.
        exterior_slope: Slope of the exterior flux column against ``xi``.
        sink_slope: Slope of the exterior sink against ``xi``.
    """

    entries: list[SweepEntry] = field(default_factory=list)
    mismatch_slope: float = math.nan
    exterior_slope: float = math.nan
    sink_slope: float = math.nan

    def write_csv(self, path: str | Path) -> Path:
        """Write the entries and slopes as CSV."""
        import csv

        path = Path(path)
        names = [f for f in SweepEntry.__dataclass_fields__]
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for e in self.entries:
                writer.writerow([repr(getattr(e, n)) if isinstance(getattr(e, n), float) else getattr(e, n)
                                 for n in names])
            writer.writerow([])
            writer.writerow(["mismatch_slope", repr(self.mismatch_slope)])
            writer.writerow(["exterior_slope", repr(self.exterior_slope)])
            writer.writerow(["sink_slope", repr(self.sink_slope)])
        return path


def parse_manifest(text: str) -> list[tuple[float, float]]:
    """Parse sweep entries, one ``dt=<v> xi=<v>`` per line (``#`` comments allowed).

    Raises:
        ValueError: On malformed lines, with the line number.
    """
    entries = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        vals: dict[str, float] = {}
        for tok in line.split():
            key, sep, val = tok.partition("=")
            if not sep or key not in ("dt", "xi") or key in vals:
                raise ValueError(f"manifest line {lineno}: expected 'dt=<v> xi=<v>', got {raw.strip()!r}")
            try:
                vals[key] = float(val)
            except ValueError:
                raise ValueError(f"manifest line {lineno}: bad number {val!r}") from None
        if set(vals) != {"dt", "xi"}:
            raise ValueError(f"manifest line {lineno}: both dt and xi are required")
        entries.append((vals["dt"], vals["xi"]))
    return entries


def _sweep_entry(cfg: RunConfig, k: int, dt: float, xi: float, out_dir: str | Path | None) -> SweepEntry:
    entry = SweepEntry(dt=dt, xi=xi, status="failed")
    try:
        sub = with_ladder(cfg, dt=dt, xi=xi)
        rep = run(sub, None if out_dir is None else Path(out_dir) / f"entry{k:03d}")
        led = rep.ledger
        mass = led.column("mass")
        mag = led.column("magnetic_total")
        entry.status = rep.halt_reason
        entry.mismatch_integral = float(led.column("mismatch_integral")[-1])
        entry.exterior_dissipation = float(led.column("exterior_dissipation")[-1])
        entry.exterior_production = float(led.column("exterior_production")[-1])
        entry.exterior_sink = float(led.column("exterior_sink")[-1])
        entry.energy_slack = led.energy_inequality_slack()
        entry.energy_defect = led.energy_defect()
        entry.mass_drift = float(abs(mass[-1] - mass[0]) / mass[0]) if mass[0] > 0 else 0.0
        entry.magnetic_drift = float(abs(mag[-1] - mag[0]) / mag[0]) if mag[0] > 0 else 0.0
        entry.message = rep.message
    except (MhdShellError, ValueError) as exc:
        entry.message = str(exc)
        logger.error("sweep entry dt=%g xi=%g failed: %s", dt, xi, exc)
    return entry


def ladder_sweep(cfg: RunConfig, settings: Sequence[tuple[float, float]],
                 out_dir: str | Path | None = None, workers: int = 1) -> SweepReport:
    """Run every ``(Dt, xi)`` setting from identical initial data.

    A failing entry is marked and the sweep continues.  Slopes are fitted to
    the entries that completed: the mismatch integral against ``Dt`` over
    entries sharing the first entry's ``xi``, and the exterior terms against
    ``xi`` over entries sharing the first entry's ``Dt``.

    Args:
        cfg: Base configuration; each entry replaces ``dt`` and ``xi``.
        settings: Sequence of ``(Dt, xi)`` pairs.
        out_dir: Optional directory for per-entry outputs and ``sweep.csv``.
        workers: Number of entries run concurrently in separate processes.
    """
    jobs = [(cfg, k, dt, xi, out_dir) for k, (dt, xi) in enumerate(settings)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            entries = list(pool.map(_sweep_entry, *zip(*jobs)))
    else:
        entries = [_sweep_entry(*job) for job in jobs]
    report = SweepReport(entries=entries)
    ok = [e for e in report.entries if e.status == HALT_COMPLETED]
    if ok:
        same_xi = [e for e in ok if e.xi == ok[0].xi]
        same_dt = [e for e in ok if e.dt == ok[0].dt]
        report.mismatch_slope = log_log_slope([e.dt for e in same_xi], [e.mismatch_integral for e in same_xi])
        report.exterior_slope = log_log_slope([e.xi for e in same_dt], [e.exterior_dissipation for e in same_dt])
        report.sink_slope = log_log_slope([e.xi for e in same_dt], [e.exterior_sink for e in same_dt])
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        report.write_csv(Path(out_dir) / "sweep.csv")
    return report
