"""Shared fixtures: baseline, the coarse acceptance table, synthetic signals."""
import os

import numpy as np
import pytest

from arcticduct.modes import WaveguideSpec, build_gv_table, table_cache_name
from arcticduct.profile import DualChannelParams, ParamGrid, build_profile, default_baseline

# coarse grid used wherever a full table is needed; the default 31 x 116 grid
# takes roughly an hour to tabulate on one core
COARSE_I = (0.0, 15.0, 1.5)
COARSE_W = (9.0, 119.0, 10.0)
TABLE_FREQS = np.arange(10.0, 100.0 + 1e-9, 1.0)

_acceptance = {}


def cache_dir():
    d = os.environ.get("ARCTICDUCT_TEST_CACHE") or os.path.join(
        os.path.expanduser("~"), ".cache", "arcticduct-tests")
    os.makedirs(d, exist_ok=True)
    return d


def cached_table(baseline, grid):
    path = os.path.join(cache_dir(), table_cache_name(baseline, grid, TABLE_FREQS))
    return build_gv_table(baseline, grid, TABLE_FREQS, cache_path=path)


@pytest.fixture(scope="session")
def baseline():
    return default_baseline()


@pytest.fixture(scope="session")
def coarse_grid():
    return ParamGrid.from_ranges(COARSE_I, COARSE_W)


@pytest.fixture(scope="session")
def coarse_table(baseline, coarse_grid):
    return cached_table(baseline, coarse_grid)


@pytest.fixture(scope="session")
def step_table(baseline):
    """I in 2.5 m/s and W in 10 m steps: holds (10, 80) and (5, 50) exactly."""
    return cached_table(baseline, ParamGrid.from_ranges((0.0, 15.0, 2.5), (20.0, 120.0, 10.0)))


@pytest.fixture(scope="session")
def make_spec(baseline):
    def make(I, W):
        return WaveguideSpec(build_profile(baseline, DualChannelParams(I, W)))
    return make


@pytest.fixture(scope="session")
def signal_200(make_spec):
    from arcticduct.synth import synthesize
    return synthesize(make_spec(7.5, 69.0), 10.0, 10.0, 200e3)


@pytest.fixture(scope="session")
def signal_518(make_spec):
    from arcticduct.synth import synthesize
    return synthesize(make_spec(7.5, 69.0), 10.0, 10.0, 518e3)


@pytest.fixture
def criterion():
    """Record one acceptance line; the summary prints them all at the end."""
    def record(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _acceptance[n] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        terminalreporter.write_line(_acceptance[n])
