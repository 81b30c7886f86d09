"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or as a script with
``python tests/test_acceptance.py``.  Every criterion is checked at its stated
tolerance; the verdict lines are repeated in the pytest terminal summary.
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.linalg import expm

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE_LINES  # noqa: E402

from mhdshell.config import config_from_overrides, with_ladder  # noqa: E402
from mhdshell.constitutive import EosParams, gibbs_residuals, stress_power  # noqa: E402
from mhdshell.diagnostics import log_log_slope  # noqa: E402
from mhdshell.initial_data import synthesize_initial_data  # noqa: E402
from mhdshell.shell import ShellForcing, ShellState, mode_matrix, shell_energy, shell_step  # noqa: E402
from mhdshell.splitting import HALT_COMPLETED, HALT_DEGENERACY, Simulation, ladder_sweep, run  # noqa: E402
from mhdshell.validation import check_geometry  # noqa: E402

DT_LADDER = (0.01, 0.005, 0.0025)
XI_LADDER = (0.2, 0.1, 0.05)


def verdict(name: str, passed: bool, detail: str) -> None:
    """Print and record one criterion line, then fail the test if it did not pass."""
    line = f"{'PASS' if passed else 'FAIL'}  {name}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append((name, passed, detail))
    assert passed, line


def strictly_decreasing(values) -> bool:
    return bool(np.all(np.diff(np.asarray(values, dtype=float)) < 0.0))


def shell_kick_config(dt: float):
    """Low-density, weakly viscous shell-kick run, so the shell carries most of the energy."""
    return config_from_overrides(
        fluid__nx=64, shell__n_nodes=128, splitting__dt=dt, splitting__final_time=0.1,
        init__recipe="shell-kick", init__rho=0.1, init__theta=0.1, init__b=0.0, init__shell_theta=0.0,
        eos__mu_bar=0.01, eos__eta_bar=0.01, eos__kappa_bar=0.01,
    )


@pytest.fixture(scope="module")
def dt_runs():
    """Shell-kick runs at each window length of the ladder, shared by two criteria."""
    return {dt: run(shell_kick_config(dt)) for dt in DT_LADDER}


@pytest.fixture(scope="module")
def bump_run():
    """1000-step density-bump run on 128^2 with per-substep positivity tracking."""
    cfg = config_from_overrides(fluid__nx=128, splitting__max_steps=1000, splitting__final_time=100.0)
    data = synthesize_initial_data(cfg)
    sim = Simulation(cfg, data.fluid, data.shell, data.ladder)
    worst = {"rho": np.inf, "b": np.inf, "theta": np.inf, "steps": 0}

    def observe(fluid, _report):
        worst["rho"] = min(worst["rho"], float(fluid.rho.min()))
        worst["b"] = min(worst["b"], float(fluid.b.min()))
        live = fluid.rho > 0.0
        if np.any(live):
            worst["theta"] = min(worst["theta"], float(fluid.theta[live].min()))
        worst["steps"] += 1

    sim.observers.append(observe)
    start = time.perf_counter()
    reason, _ = sim.run(cfg.n_windows, record_every=10)
    return {"initial": data.fluid, "sim": sim, "reason": reason, "worst": worst,
            "seconds": time.perf_counter() - start}


def test_c1_gibbs_relation():
    start = time.perf_counter()
    r = np.linspace(0.1, 5.0, 50)
    rho, theta = np.meshgrid(r, r, indexing="ij")
    r_t, r_r = gibbs_residuals(rho, theta, 1.0, EosParams())
    seconds = time.perf_counter() - start
    worst = max(float(r_t.max()), float(r_r.max()))
    verdict("C1 Gibbs relation", worst <= 1e-6 and seconds < 1.0,
            f"max relative residual {worst:.2e} (tol 1e-6), {seconds:.3f}s")


def test_c2_conservation(bump_run):
    sim, f0 = bump_run["sim"], bump_run["initial"]
    steps = sim.cumulative.fluid_steps
    d_rho = abs(sim.fluid.rho.sum() - f0.rho.sum()) / f0.rho.sum()
    d_b = abs(sim.fluid.b.sum() - f0.b.sum()) / f0.b.sum()
    ok = steps >= 1000 and d_rho <= 1e-10 and d_b <= 1e-10 and bump_run["seconds"] < 120.0
    verdict("C2 conservation", ok,
            f"{steps} steps on 128^2, drift rho {d_rho:.1e}, b {d_b:.1e} (tol 1e-10), {bump_run['seconds']:.0f}s")


def test_c3_positivity(bump_run):
    w = bump_run["worst"]
    G = np.random.default_rng(2024).normal(scale=10.0, size=(100_000, 2, 2))
    theta = np.random.default_rng(2025).uniform(0.0, 10.0, 100_000)
    g = np.random.default_rng(2026).uniform(1e-6, 1.0, 100_000)
    power = float(stress_power(theta, G, g, EosParams()).min())
    ok = w["rho"] >= 0.0 and w["b"] >= 0.0 and w["theta"] >= 1e-12 and power >= 0.0 and w["steps"] >= 1000
    verdict("C3 positivity", ok,
            f"min rho {w['rho']:.1e}, min b {w['b']:.1e}, min theta|rho>0 {w['theta']:.3g} over {w['steps']} "
            f"steps; min S:grad u {power:.2e} over 1e5 samples")


def test_c4_energy_inequality(dt_runs):
    bounded, mono, defects, slacks = True, True, [], []
    for dt in DT_LADDER:
        led = dt_runs[dt].ledger
        bal = led.column("balance")
        bounded &= bool(np.all(bal <= 1.05 * led.column("total")[0]))
        mono &= all(led.monotone(c) for c in ("shell_dissipation", "fluid_dissipation", "sink"))
        defects.append(led.energy_defect())
        slacks.append(led.energy_inequality_slack())
    ok = bounded and mono and strictly_decreasing(defects) and all(r.halt_reason == HALT_COMPLETED
                                                                  for r in dt_runs.values())
    verdict("C4 coupled energy inequality", ok,
            f"balance <= 1.05 E0: {bounded}; dissipation/sink monotone: {mono}; "
            f"defect max|balance/E0-1| over dt {DT_LADDER}: {', '.join(f'{d:.2e}' for d in defects)}; "
            f"one-sided excess {', '.join(f'{s:.1e}' for s in slacks)}")


def test_c5_mismatch_convergence(dt_runs):
    start = time.perf_counter()
    mism = [float(dt_runs[dt].ledger.column("mismatch_integral")[-1]) for dt in DT_LADDER]
    slope = log_log_slope(DT_LADDER, mism)
    seconds = sum(r.wall_time for r in dt_runs.values()) + time.perf_counter() - start
    ok = strictly_decreasing(mism) and slope >= 0.8 and seconds < 600.0
    verdict("C5 penalty mismatch", ok,
            f"integrated mismatch {', '.join(f'{m:.3e}' for m in mism)} at dt {DT_LADDER}; "
            f"slope {slope:.2f} (>= 0.8), {seconds:.0f}s")


def test_c6_exterior_decay():
    cfg = config_from_overrides(fluid__nx=64, shell__n_nodes=128, splitting__dt=0.01, splitting__final_time=0.1)
    rep = ladder_sweep(cfg, [(0.01, xi) for xi in XI_LADDER], workers=3)
    ext = [e.exterior_dissipation for e in rep.entries]
    sink = [e.exterior_sink for e in rep.entries]
    prod = [e.exterior_production for e in rep.entries]
    ok = all(e.status == HALT_COMPLETED for e in rep.entries) and strictly_decreasing(ext) and strictly_decreasing(sink)
    verdict("C6 exterior-term decay", ok,
            f"xi {XI_LADDER}: exterior stress+entropy flux {', '.join(f'{v:.3e}' for v in ext)}; "
            f"exterior sink {', '.join(f'{v:.3e}' for v in sink)}; "
            f"(exterior entropy production, only bounded: {', '.join(f'{v:.3e}' for v in prod)})")


def test_c7_shell_oracle():
    start = time.perf_counter()
    n, delta, a1, a2, dt = 16, 0.01, 0.1, 0.01, 0.01
    y = np.arange(n) / n
    errors, monotone = [], True
    for k in range(1, 6):
        A = mode_matrix(k, delta, a1, a2, penalty=delta / dt)
        rate = float(np.max(np.abs(np.linalg.eigvals(A))))
        final = 0.2 / rate  # a fifth of a radian of the fastest mode
        steps = int(np.ceil(final * rate / 1.5e-6))
        tau = final / steps
        c = np.cos(2 * np.pi * k * y)
        state = ShellState(0.01 * c, 0.0 * c, 0.01 * c)
        forcing = ShellForcing.zeros(n)

        def energy(s):
            e = shell_energy(s, a2, theta_weight=0.5)
            return (1 - delta) * e.kinetic + e.bending + e.inertial_gradient + e.thermal

        prev = energy(state)
        for _ in range(steps):
            state = shell_step(state, forcing, tau, dt, delta, a1, a2)
            cur = energy(state)
            monotone &= cur <= prev
            prev = cur
        x = expm(A * final) @ np.array([0.01, 0.0, 0.01])
        ref = np.outer(x, c)
        errors.append(float(np.linalg.norm(np.stack([state.w, state.v, state.theta]) - ref) / np.linalg.norm(ref)))
    seconds = time.perf_counter() - start
    ok = max(errors) <= 1e-6 and monotone and seconds < 60.0
    verdict("C7 shell oracle", ok,
            f"relative L2 errors {', '.join(f'{e:.1e}' for e in errors)} (tol 1e-6); "
            f"energy non-increasing: {monotone}; {seconds:.0f}s")


def test_c8_geometry_round_trip():
    res = check_geometry(np.random.default_rng(8), samples=10_000)
    verdict("C8 geometry round trip", res.passed, res.detail)


def test_c9_leakage():
    cfg = config_from_overrides(fluid__nx=64, shell__n_nodes=128, init__recipe="shell-kick",
                                splitting__max_steps=1000, splitting__final_time=100.0)
    data = synthesize_initial_data(cfg)
    sim = Simulation(cfg, data.fluid, data.shell, data.ladder)
    sim.run(cfg.n_windows, record_every=5)
    leak = float(sim.ledger.column("leakage")[-1])
    moved = float(np.max(np.abs(sim.shell.w)))
    ok = sim.cumulative.fluid_steps >= 1000 and leak <= 1e-3 and moved > 0.0
    verdict("C9 leakage", ok,
            f"mass fraction outside band {leak:.2e} (tol 1e-3) after {sim.cumulative.fluid_steps} steps, "
            f"max |w| {moved:.2e}")


def test_c10_degeneracy_halt():
    cfg = with_ladder(config_from_overrides(fluid__nx=64, shell__n_nodes=128, init__recipe="collapse"),
                      final_time=1.0)
    rep = run(cfg)
    finite = all(np.all(np.isfinite(rep.ledger.column(c))) for c in ("total", "balance", "mass"))
    ok = rep.halt_reason == HALT_DEGENERACY and np.isfinite(rep.halt_time) and finite
    verdict("C10 degeneracy halt", ok,
            f"halt reason {rep.halt_reason!r} at t={rep.halt_time:.4g}; ledger finite: {finite}; {rep.message}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
