from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def movielens_dir():
    return FIXTURES / "movielens"


def random_round(rng, n, d, symmetric=False):
    """Contexts, a valid interference matrix and actions for ``n`` units."""
    x = rng.normal(size=(n, d))
    w = rng.uniform(-1, 1, size=(n, n))
    if symmetric:
        w = np.triu(w) + np.triu(w, 1).T
    np.fill_diagonal(w, 1.0)
    a = rng.integers(0, 2, size=n)
    return x, w, a


ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance():
    """Record one ``PASS``/``FAIL`` verdict line per acceptance criterion."""

    def record(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
