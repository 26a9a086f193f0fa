from __future__ import annotations

import time

import numpy as np
import pytest

from torevac.boundary_data import TWO_PI, BoundarySamples, Conductivity
from torevac.mesh import ClosedCurve
from torevac.shape_opt import OptimizationConfig, optimize
from torevac.synth import manufactured_dataset, star_curve

CENTER = (2.42, 0.0)
R2 = 0.92

CRITERIA = {
    "C1": "annulus radius recovery",
    "C2": "manufactured-domain recovery",
    "C3": "adjoint gradient check",
    "C4": "descent identity",
    "C5": "FEM convergence",
    "C6": "BEP oracle equivalence",
    "C7": "Cauchy completion stability",
    "C8": "c-recovery",
    "C9": "conservation and maximum principle",
}

_outcomes: dict[str, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _outcomes.setdefault(marker.args[0], []).append(rep.passed)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for key, title in CRITERIA.items():
        if key not in _outcomes:
            continue
        status = "PASS" if all(_outcomes[key]) else "FAIL"
        terminalreporter.write_line(f"{status} {key} {title}")


# ----------------------------------------------------------------------------
# shared runs
# ----------------------------------------------------------------------------


def annulus_samples(R1: float, c0: float = 2.0, n: int = 64) -> BoundarySamples:
    """Constant Cauchy data of the concentric log solution with ``u = c`` at ``R1``."""
    u1 = -c0 / (R2 * np.log(R2 / R1))
    theta = TWO_PI * np.arange(n) / n
    return BoundarySamples(theta, np.full(n, -c0), np.full(n, u1), CENTER, R2)


def wobbly_circle(mean: float = 0.4) -> ClosedCurve:
    return ClosedCurve.polar(CENTER, lambda t: mean + 0.03 * np.cos(2 * t) + 0.02 * np.sin(3 * t), 200)


@pytest.fixture(scope="session")
def annulus_run():
    R1 = 0.5
    data = annulus_samples(R1)
    cfg = OptimizationConfig(h=0.03, c=0.0)
    start = time.perf_counter()
    curve, hist = optimize(data, Conductivity.constant(1.0), cfg, wobbly_circle(), check_flux=True)
    return {"R1": R1, "curve": curve, "history": hist, "elapsed": time.perf_counter() - start, "config": cfg}


@pytest.fixture(scope="session")
def star_truth():
    return manufactured_dataset(star_curve(CENTER), Conductivity.inverse_r(), 0.015)


@pytest.fixture(scope="session")
def star_run(star_truth):
    cfg = OptimizationConfig(h=0.03, c=0.0)
    start = time.perf_counter()
    curve, hist = optimize(
        star_truth.samples, Conductivity.inverse_r(), cfg, ClosedCurve.circle(CENTER, 0.4, 120), check_flux=True
    )
    return {"curve": curve, "history": hist, "elapsed": time.perf_counter() - start, "config": cfg}
