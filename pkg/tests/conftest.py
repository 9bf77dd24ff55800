import numpy as np
import pytest

from anderson_lab.groundstate import compute_constants, limit_profiles, solve_ground_state


@pytest.fixture(scope="session")
def ground_states():
    """Ground state, constants and limit profiles for d = 1, 2, 3 (solved once)."""
    out = {}
    for d in (1, 2, 3):
        prof = solve_ground_state(d)
        consts = compute_constants(prof)
        out[d] = (prof, consts, limit_profiles(prof, consts))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = []


@pytest.fixture
def criterion():
    """Record an acceptance criterion outcome, print it, then assert it."""

    def report(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _CRITERIA.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
