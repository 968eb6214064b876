import numpy as np
import pytest

from bruq.lab import builtin_scenario, evolve


@pytest.fixture(scope="session")
def v1():
    return evolve(builtin_scenario("version1"))


@pytest.fixture(scope="session")
def v2():
    return evolve(builtin_scenario("version2"))


def random_state_vector(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return v / np.linalg.norm(v)


def random_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(test_acceptance.RESULTS.items()):
            terminalreporter.write_line(line)
