import numpy as np
import pytest

from romkit.synth import ToyCapsule, generate_linear, make_linear_oracle, timed_toy_capsule

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_full():
    """Default toy capsule (2562 nodes, N = 250, dt = 0.04) and its generation time."""
    return timed_toy_capsule(ToyCapsule())


@pytest.fixture(scope="session")
def toy_small():
    """Coarse toy capsule for fast unit tests."""
    return timed_toy_capsule(ToyCapsule(n_nodes=162, dt_fom=0.004))[0]


@pytest.fixture(scope="session")
def linear_small():
    return generate_linear(make_linear_oracle(k=6, d=90, n_snapshots=120, dt=0.04, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
