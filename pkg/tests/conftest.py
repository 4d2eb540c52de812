import time

import numpy as np
import pytest

from icpmac.core import EnvironmentData
from icpmac.datagen import simplex_codebook

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def simplex4() -> EnvironmentData:
    return simplex_codebook(4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_env(rng, m, n, env_id=0):
    return EnvironmentData(rng.standard_normal((n, m)), env_id=env_id)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


_FULL_RUNS: dict = {}
FULL_RUN_SECONDS: dict[str, float] = {}


@pytest.fixture(scope="session")
def full_run():
    """Run a built-in scenario at its configured size once per session."""
    from icpmac.harness import builtin_scenario, run_scenario

    def get(name):
        if name not in _FULL_RUNS:
            start = time.perf_counter()
            _FULL_RUNS[name] = run_scenario(builtin_scenario(name))
            FULL_RUN_SECONDS[name] = time.perf_counter() - start
        return _FULL_RUNS[name]

    return get


def curve(rows, method):
    pts = sorted((r.grid_value, r) for r in rows if r.method == method)
    return [r for _, r in pts]


def nonincreasing_within_bands(rows, z=3.0):
    """Every later point's lower band stays below every earlier point's upper band."""
    for i, a in enumerate(rows):
        for b in rows[i + 1:]:
            if b.p_err - z * b.stderr > a.p_err + z * a.stderr:
                return False, (a.grid_value, a.p_err, b.grid_value, b.p_err)
    return True, None
