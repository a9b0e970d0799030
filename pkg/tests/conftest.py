import os

import numpy as np
import pytest

from thermopinn import geometry, mms, physics
from thermopinn.network import InputNormalization, build_model


def central_diff(f, x, h):
    """Central differences of ``f`` (scalar or array valued) along every entry of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def second_diff(f, x, h):
    """Second-order central differences ``d2f/dx_a dx_b`` of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    H = np.empty((n, n))
    f0 = f(x)
    for a in range(n):
        ea = np.zeros(n)
        ea[a] = h
        H[a, a] = (f(x + ea) - 2.0 * f0 + f(x - ea)) / h**2
        for b in range(a + 1, n):
            eb = np.zeros(n)
            eb[b] = h
            H[a, b] = H[b, a] = (f(x + ea + eb) - f(x + ea - eb) - f(x - ea + eb) + f(x - ea - eb)) / (4 * h * h)
    return H


def rel_err(approx, exact):
    """Max-abs error scaled by the max-abs reference entry."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    ref = np.max(np.abs(exact))
    return float(np.max(np.abs(approx - exact)) / (ref if ref > 0 else 1.0))


def small_cube(grid=(3, 3, 3), stations=(0.0, 0.5, 1.0), case="case1"):
    """A cheap cube set for gradient checks (a few dozen points)."""
    dt = stations[1] - stations[0]
    cs = geometry.sample_box(grid=grid, time=geometry.TimeGrid(stations[0], stations[-1], dt))
    return cs, mms.ProblemData.for_case(case)


def small_model(cs, inputs, hidden=2, neurons=5, activation="tanh", seed=7):
    from thermopinn.training import output_scaling

    scale, shift = output_scaling(inputs)
    return build_model(hidden, neurons, activation, seed, InputNormalization.from_bounds(*cs.input_bounds()),
                       scale, shift)


@pytest.fixture(scope="session")
def cube_small():
    cs, prob = small_cube()
    return cs, prob, physics.prepare_loss_inputs(cs, prob)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("THERMOPINN_SLOW"):
        return
    skip = pytest.mark.skip(reason="set THERMOPINN_SLOW=1 to run multi-seed training checks")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    """Print a criterion verdict now and repeat it in the terminal summary."""
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
