import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from brasyn.phantom import PhantomSpec, generate_phantom

settings.register_profile("repo", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

torch.use_deterministic_algorithms(True)


@pytest.fixture(scope="session")
def small_study():
    return generate_phantom(PhantomSpec(shape=(32, 32, 32), rng_seed=5))


@pytest.fixture(scope="session")
def toy_study():
    return generate_phantom(PhantomSpec(rng_seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record and assert one acceptance criterion; lines are echoed in the terminal summary."""

    def report(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
