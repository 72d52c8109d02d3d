import numpy as np
import pytest

from mixtwice.densities import UnitStats, build_component_tensor
from mixtwice.grids import build_effect_grid, build_variance_grid


def make_stats(seed, m=300, pi0=0.8, n=10, alt_sd=2.0):
    """Two-group summaries with unit per-observation variance."""
    rng = np.random.default_rng(seed)
    null = rng.random(m) < pi0
    theta = np.where(null, 0.0, rng.normal(0.0, alt_sd, m))
    x = theta + rng.normal(0.0, np.sqrt(2.0 / n), m)
    s2 = (2.0 / n) * rng.chisquare(2 * n - 2, m) / (2 * n - 2)
    return UnitStats(x, s2, 2.0 * n - 2.0)


@pytest.fixture
def small_problem():
    stats = make_stats(11, m=200)
    eg = build_effect_grid(stats, 5)
    vg = build_variance_grid(stats, 4)
    return stats, eg, vg, build_component_tensor(stats, eg, vg)


ACCEPTANCE_LINES = []


def record(number, passed, detail):
    """Log one acceptance verdict; echoed again in the terminal summary."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
