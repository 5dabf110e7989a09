import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fiap.spec import FiapSpec, builtin_instance

settings.register_profile("fiap", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fiap")


@pytest.fixture
def gl4():
    """Symmetric Galves-Löcherbach network, K=4, unit weights, sigma=0.3 on positives."""
    return builtin_instance("galves-locherbach", {"K": 4, "sigma": [0.0, 0.3], "weights": 1})


@pytest.fixture
def gordon_newell():
    return builtin_instance("gordon-newell", {"K": 3, "sigma": [0.0, 0.5, 0.8]})


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def gl_spec(K: int, sigma=(0.0, 1.0), weights=1) -> FiapSpec:
    return builtin_instance("galves-locherbach", {"K": K, "sigma": list(sigma), "weights": weights})


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    """Print one verdict line and keep it for the end-of-session summary."""
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
