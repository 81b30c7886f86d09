"""Shared fixtures: small configurations that run in a fraction of a second."""

from __future__ import annotations

import pytest

from mhdshell.config import config_from_overrides


def small_config(**overrides):
    """A 32x32 configuration with two windows; keyword overrides win."""
    base = dict(fluid__nx=32, shell__n_nodes=64, splitting__final_time=0.02, init__support=0.6)
    base.update(overrides)
    return config_from_overrides(**base)


@pytest.fixture
def small_cfg():
    """Factory fixture returning :func:`small_config`."""
    return small_config


#: One ``(criterion, passed, detail)`` entry per acceptance criterion, in run order.
ACCEPTANCE_LINES: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Repeat the acceptance verdicts at the end of the pytest output."""
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
