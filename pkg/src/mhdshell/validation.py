"""Self-contained property suite behind the ``validate`` subcommand.

Each check draws its random samples from a seeded generator and returns a
:class:`CheckResult`; none of them touches the file system.
"""

from __future__ import annotations

import logging
import time
from typing import Callable, NamedTuple

import numpy as np

from .constitutive import EosParams, gibbs_residuals, stress_power
from .fluid import face_velocities, outflow_rate, transport_step
from .geometry import (
    GeometryConfig,
    Grid,
    boundary_point,
    flow_map,
    inverse_flow_map,
    jacobian_sigma,
    project,
    signed_distance,
)

logger = logging.getLogger(__name__)


class CheckResult(NamedTuple):
    """Outcome of one property check."""

    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def check_gibbs(points: int = 50, tol: float = 1e-6) -> CheckResult:
    """Both Gibbs identities on a ``points x points`` grid over ``[0.1, 5]^2``."""
    eos = EosParams()
    r = np.linspace(0.1, 5.0, points)
    rho, theta = np.meshgrid(r, r, indexing="ij")
    r_t, r_r = gibbs_residuals(rho, theta, 1.0, eos)
    worst = max(float(np.max(r_t)), float(np.max(r_r)))
    return CheckResult("gibbs", worst <= tol, f"max relative residual {worst:.3e} (tol {tol:.0e})")


def check_stress_positivity(rng: np.random.Generator, samples: int = 100_000) -> CheckResult:
    """``S : grad u >= 0`` for random gradients, temperatures and weights."""
    eos = EosParams()
    G = rng.normal(scale=10.0, size=(samples, 2, 2))
    theta = rng.uniform(0.0, 10.0, samples)
    g = rng.uniform(1e-6, 1.0, samples)
    power = stress_power(theta, G, g, eos)
    worst = float(np.min(power))
    return CheckResult("stress-positivity", worst >= 0.0, f"min S:grad u over {samples} samples = {worst:.3e}")


def random_displacement(rng: np.random.Generator, nodes: int, amplitude: float, modes: int = 4) -> np.ndarray:
    """Random smooth periodic displacement with ``max |w| <= amplitude``."""
    y = np.arange(nodes) / nodes
    w = np.zeros(nodes)
    for k in range(modes + 1):
        w += rng.normal() * np.cos(2 * np.pi * k * y) + rng.normal() * np.sin(2 * np.pi * k * y)
    return amplitude * w / np.max(np.abs(w))


def check_geometry(rng: np.random.Generator, samples: int = 10_000, tol: float = 1e-10) -> CheckResult:
    """Flow-map round trip, flat surface element and circle oracles."""
    cfg = GeometryConfig()
    w = random_displacement(rng, 64, 0.25)
    ang = rng.uniform(0.0, 2 * np.pi, samples)
    rad = cfg.radius * np.sqrt(rng.uniform(0.0, 2.25, samples))
    x = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)
    back = inverse_flow_map(0.0, flow_map(0.0, x, w, cfg), w, cfg)
    trip = float(np.max(np.hypot(*(back - x).T)))
    sigma = float(np.max(np.abs(jacobian_sigma(0.0, np.arange(32) / 32, np.zeros(32), cfg) - 1.0)))
    y = rng.uniform(0.0, 1.0, 256)
    s = rng.uniform(0.1, 3.0, 256)
    pts = boundary_point(y, cfg.radius) * s[:, None]
    dist = float(np.max(np.abs(signed_distance(pts, cfg.radius) - (s - 1.0) * cfg.radius)))
    proj = float(np.max(np.abs(project(pts, cfg.radius) - boundary_point(y, cfg.radius))))
    ok = trip <= tol * cfg.radius and sigma <= 1e-8 and dist <= 1e-14 and proj <= 1e-14
    return CheckResult(
        "geometry-roundtrip", ok,
        f"round trip {trip:.2e}, |sigma-1| {sigma:.2e}, distance {dist:.1e}, projection {proj:.1e}",
    )


def check_transport(rng: np.random.Generator, trials: int = 200, n: int = 24) -> CheckResult:
    """Mass conservation and positivity of upwind transport on random states."""
    grid = Grid(n, 1.0)
    worst_drift = 0.0
    worst_min = 0.0
    for _ in range(trials):
        rho = rng.uniform(0.0, 2.0, (n, n)) * (rng.uniform(size=(n, n)) > 0.3)
        u = rng.normal(size=(2, n, n))
        u[:, grid.boundary_mask] = 0.0
        faces = face_velocities(u)
        rate = float(outflow_rate(faces, grid.h).max())
        tau = rng.uniform(0.1, 1.0) / rate
        new = transport_step(rho, faces, tau, grid.h)
        total = float(rho.sum())
        if total > 0.0:
            worst_drift = max(worst_drift, abs(float(new.sum()) - total) / total)
        worst_min = min(worst_min, float(new.min()))
    ok = worst_drift <= 1e-14 and worst_min >= 0.0
    return CheckResult("transport-conservation", ok,
                       f"max relative drift {worst_drift:.2e}, min density {worst_min:.2e} over {trials} trials")


def run_validation(seed: int = 0) -> list[CheckResult]:
    """Run the whole suite with generators derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).spawn(3)
    suite: list[tuple[str, Callable[[], CheckResult]]] = [
        ("gibbs", check_gibbs),
        ("stress", lambda: check_stress_positivity(np.random.default_rng(seeds[0]))),
        ("geometry", lambda: check_geometry(np.random.default_rng(seeds[1]))),
        ("transport", lambda: check_transport(np.random.default_rng(seeds[2]))),
    ]
    results = []
    for name, fn in suite:
        start = time.perf_counter()
        try:
            res = fn()
        except Exception as exc:  # a crash is a failed check, reported with its message
            logger.exception("validation check %s crashed", name)
            res = CheckResult(name, False, f"crashed: {exc!r}")
        results.append(res._replace(seconds=time.perf_counter() - start))
    return results


def format_results(results: list[CheckResult]) -> str:
    """One ``PASS``/``FAIL`` line per check."""
    width = max(len(r.name) for r in results)
    return "\n".join(
        f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}  [{r.seconds:.2f}s]" for r in results
    )
