from __future__ import annotations

import numpy as np
import pytest

from fracnuss.plant import ZERO_REFERENCE, Scenario, SubsystemSpec


def single_integrator(phi=lambda x: 0.0 * x[0], x0=0.0, gain=1.0) -> Scenario:
    """One first-order subsystem ``D^a x = gain u + phi(x)`` regulated to zero."""
    spec = SubsystemSpec(
        n=1,
        gains=(lambda t: gain + 0.0 * np.asarray(t),),
        phis=(phi,),
        interactions=(lambda y, xs: 0.0 * y[0],),
        disturbance=lambda t: 0.0 * np.asarray(t),
        psi_bounds=((None,),),
        beta=np.zeros((1, 1)),
        dist_bound=0.0,
        gain_bounds=((gain, gain),),
        x0=np.array([x0]),
        name="integrator",
    )
    return Scenario("integrator", 0.8, (spec,), (ZERO_REFERENCE,), box=1.0, design={"sub1.cbar1": 2.0})


@pytest.fixture
def integrator():
    return single_integrator


# one line per acceptance criterion, printed after the run even when output is captured
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def acceptance_report():
    """Record ``(number, ok, detail)`` for the summary and echo it."""

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)

    return record
