import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from riwtl.core import Dataset, TransferProblem, TruthSpec

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_identical_problem(seed=0, p=40, n0=90, K=2, n_k=240, s0=4, noise=1.0):
    """Target and sources drawn from the same model (delta = 0)."""
    rng = np.random.default_rng(seed)
    beta = np.zeros(p)
    beta[:s0] = 1.0

    def draw(n):
        x = rng.standard_normal((n, p))
        return Dataset(x, x @ beta + noise * rng.standard_normal(n))

    target = draw(n0)
    sources = tuple(draw(n_k) for _ in range(K))
    return TransferProblem(target, sources, TruthSpec(beta, tuple(beta for _ in range(K))))


@pytest.fixture
def small_problem():
    return make_identical_problem()


def orthonormal_design(n, p, seed=0):
    """X with X'X / n = I."""
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, p)))
    return q * np.sqrt(n)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
