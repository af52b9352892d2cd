import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from switchlyap.flows import SwitchedSystem

settings.register_profile(
    "ci", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

# damped rotations whose average has a zero spectral abscissa
ROT_A1 = np.array([[0.0, -1.0], [1.0, -1.0]])
ROT_A2 = np.array([[0.0, 1.0], [-1.0, -1.0]])


@pytest.fixture(scope="session")
def rot_pair():
    return SwitchedSystem([ROT_A1, ROT_A2])


def random_skew(rng, d):
    k = rng.standard_normal((d, d))
    return k - k.T


def skew_shift_instance(rng, d, N, c):
    """``c I + T K_i T^-1`` with random skew ``K_i`` and well conditioned ``T``."""
    T = np.eye(d) + 0.3 * rng.standard_normal((d, d))
    Ti = np.linalg.inv(T)
    return SwitchedSystem([c * np.eye(d) + T @ random_skew(rng, d) @ Ti
                           for _ in range(N)])


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
