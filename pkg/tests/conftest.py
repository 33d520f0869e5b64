import functools

import numpy as np
import pytest

from halfwave.ground_state import solve_ground_state
from halfwave.modulation import make_frame
from halfwave.profile import build_profile_set
from halfwave.spectral import make_grid


@functools.lru_cache(maxsize=None)
def ground_state(L, N, tol=1e-10):
    return solve_ground_state(make_grid(L, N), tol)


@functools.lru_cache(maxsize=None)
def profile_set(L, N):
    return build_profile_set(ground_state(L, N))


@functools.lru_cache(maxsize=None)
def frame(L, N):
    return make_frame(profile_set(L, N))


@pytest.fixture(scope="session")
def small_gs():
    return ground_state(8.0, 256)


@pytest.fixture(scope="session")
def small_ps():
    return profile_set(8.0, 256)


@pytest.fixture(scope="session")
def small_frame():
    return frame(8.0, 256)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines are collected here and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
