from __future__ import annotations

import math

import numpy as np
import pytest

from mhdshell.diagnostics import (
    LEDGER_COLUMNS,
    Cumulative,
    EnergyLedger,
    degeneracy_check,
    interface_mismatch,
    leakage,
    log_log_slope,
    monitor_exponents,
    resample_periodic,
    total_energy,
)
from mhdshell.geometry import GeometryConfig
from mhdshell.initial_data import synthesize_initial_data
from mhdshell.shell import ShellState

GEO = GeometryConfig()


def test_monitor_exponents_for_gamma_two():
    assert np.allclose(monitor_exponents(2.0, 20.0), (0.4, 0.4))
    with pytest.raises(ValueError):
        monitor_exponents(1.7, 2.0)


def test_log_log_slope_recovers_power():
    x = np.array([0.01, 0.005, 0.0025])
    assert np.isclose(log_log_slope(x, 3.0 * x**1.5), 1.5)
    assert math.isnan(log_log_slope([1.0], [1.0]))


def test_resample_periodic_is_exact_for_low_modes():
    y = np.arange(16) / 16
    f = np.sin(2 * np.pi * y)
    z = np.arange(40) / 40
    assert np.allclose(resample_periodic(f, 40), np.sin(2 * np.pi * z), atol=1e-12)
    assert resample_periodic(f, 16) is f


def test_degeneracy_check_margins():
    rep = degeneracy_check(np.full(8, 0.1), GEO)
    assert np.isclose(rep.lower_margin, 0.6) and np.isclose(rep.upper_margin, 0.4)
    assert np.isclose(rep.sigma_min, 1.1, atol=1e-8)
    assert not rep.halt and rep.reason == ""
    bad = degeneracy_check(np.full(8, -0.5), GEO)
    assert bad.halt and "lower" in bad.reason


def test_rest_state_has_no_mismatch_or_leakage(small_cfg):
    data = synthesize_initial_data(small_cfg())
    assert interface_mismatch(data.fluid, data.shell, GEO) == 0.0
    assert leakage(data.fluid, data.shell, GEO) == 0.0


def test_mismatch_of_moving_shell_equals_its_norm(small_cfg):
    data = synthesize_initial_data(small_cfg())
    n = data.shell.n
    v = 0.1 * np.ones(n)
    moving = ShellState(np.zeros(n), v, np.zeros(n))
    # The fluid is at rest, so the mismatch is int |w_t|^2 ds = 0.01 * 2 pi R0.
    assert np.isclose(interface_mismatch(data.fluid, moving, GEO), 0.01 * 2 * np.pi)


def test_leakage_counts_mass_outside_band(small_cfg):
    data = synthesize_initial_data(small_cfg())
    rho = data.fluid.rho.copy()
    r = np.hypot(*np.moveaxis(data.grid.points, -1, 0))
    rho[r > 1.8] = 1.0
    from dataclasses import replace

    leaky = replace(data.fluid, rho=rho)
    expected = rho[r > 1.8].sum() / rho.sum()
    assert np.isclose(leakage(leaky, data.shell, GEO, band_cells=4.0), expected)


def test_total_energy_balance_column(small_cfg):
    cfg = small_cfg()
    data = synthesize_initial_data(cfg)
    cum = Cumulative(shell_dissipation=0.5, sink=0.25)
    rec = total_energy(0.0, data.fluid, data.shell, data.ladder.eos, GEO, delta=0.01, alpha2=0.01, cumulative=cum)
    parts = (rec.kinetic + rec.magnetic + rec.internal + rec.artificial + rec.shell_kinetic + rec.shell_bending
             + rec.shell_inertial + rec.shell_thermal + rec.penalty_memory)
    assert np.isclose(rec.total, parts)
    assert np.isclose(rec.balance, rec.total + 0.75)
    assert rec.mass > 0.0 and rec.lower_margin > 0.0


def _record(**values):
    base = {c: 0.0 for c in LEDGER_COLUMNS}
    base["fluid_steps"] = 0
    base.update(values)
    from mhdshell.diagnostics import LedgerRecord

    return LedgerRecord(**base)


def test_ledger_csv_round_trip_is_exact(tmp_path):
    led = EnergyLedger()
    for k in range(3):
        led.append(_record(time=0.1 * k, total=1.0 / 3.0 + k, balance=1.0 + 1e-17 * k, fluid_steps=k))
    path = led.write_csv(tmp_path / "ledger.csv")
    back = EnergyLedger.read_csv(path)
    assert back.records == led.records


def test_ledger_read_rejects_wrong_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        EnergyLedger.read_csv(path)


def test_slack_defect_and_monotone():
    led = EnergyLedger([_record(balance=b, sink=s) for b, s in ((1.0, 0.0), (1.02, 0.1), (0.97, 0.05))])
    assert np.isclose(led.energy_inequality_slack(), 0.02)
    assert np.isclose(led.energy_defect(), 0.03)
    assert not led.monotone("sink")
    assert led.monotone("sink", rtol=0.6)
    with pytest.raises(KeyError):
        led.column("nope")
