"""Command-line entry point: ``mhdshell run | sweep | validate``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import DEFAULT_CONFIG, parse_config
from .errors import ConfigError, MhdShellError

logger = logging.getLogger("mhdshell")

THREADS_ENV = "MHDSHELL_THREADS"


def worker_count() -> int:
    """Worker cap from ``MHDSHELL_THREADS`` (default 1).

    Raises:
        ConfigError: If the variable is set but not a positive integer.
    """
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        val = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if val < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return val


def build_parser() -> argparse.ArgumentParser:
    """Argument parser of the ``mhdshell`` command."""
    parser = argparse.ArgumentParser(prog="mhdshell", description="Compressible MHD fluid coupled to a thermoelastic shell.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="march one configuration")
    p_run.add_argument("--config", required=True, type=Path, help="configuration file")
    p_run.add_argument("--out", required=True, type=Path, help="output directory")
    p_run.add_argument("--restart", type=Path, default=None, help="continue from this checkpoint")
    p_run.add_argument("--record-every", type=int, default=1, help="ledger interval in windows")

    p_sweep = sub.add_parser("sweep", help="run a ladder of (dt, xi) settings")
    p_sweep.add_argument("--config", required=True, type=Path, help="base configuration file")
    p_sweep.add_argument("--manifest", required=True, type=Path, help="lines of 'dt=<v> xi=<v>'")
    p_sweep.add_argument("--out", required=True, type=Path, help="output directory")

    p_val = sub.add_parser("validate", help="run the property suite")
    p_val.add_argument("--seed", type=int, default=0, help="seed of the random samples")

    sub.add_parser("default-config", help="print the default configuration")
    return parser


def _cmd_run(args) -> int:
    from .splitting import run

    cfg = parse_config(args.config)
    report = run(cfg, args.out, record_every=max(args.record_every, 1), restart=args.restart)
    print(f"halt: {report.halt_reason} at t={report.halt_time:.6g} after {report.windows} windows")
    if report.message:
        print(f"detail: {report.message}")
    print(f"ledger: {report.ledger_path}")
    print(f"checkpoint: {report.checkpoint_path}")
    return 0


def _cmd_sweep(args) -> int:
    from .splitting import ladder_sweep, parse_manifest

    cfg = parse_config(args.config)
    try:
        settings = parse_manifest(args.manifest.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    report = ladder_sweep(cfg, settings, args.out, workers=worker_count())
    for e in report.entries:
        print(f"dt={e.dt:g} xi={e.xi:g} {e.status} mismatch={e.mismatch_integral:.4e} "
              f"exterior={e.exterior_dissipation:.4e} sink={e.exterior_sink:.4e}")
    print(f"slopes: mismatch/dt {report.mismatch_slope:.3f}, exterior/xi {report.exterior_slope:.3f}, "
          f"sink/xi {report.sink_slope:.3f}")
    return 0 if any(e.status != "failed" for e in report.entries) else 1


def _cmd_validate(args) -> int:
    from .validation import format_results, run_validation

    results = run_validation(args.seed)
    print(format_results(results))
    return 0 if all(r.passed for r in results) else 1


def main(argv: list[str] | None = None) -> int:
    """Run the command line; returns the process exit status.

    Exit status is 0 on success, 1 on runtime or validation failure and 2 on
    configuration errors.
    """
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "validate":
            return _cmd_validate(args)
        sys.stdout.write(DEFAULT_CONFIG)
        return 0
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (MhdShellError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main_entry() -> None:
    """Console-script wrapper that exits with the status of :func:`main`."""
    raise SystemExit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
