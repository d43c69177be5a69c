import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from topolab.agents import AgentSpec, TaskItem, homogeneous_agents

# derandomized so statistical property checks give the same verdict on every run
settings.register_profile("default", deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def reference_agents():
    return homogeneous_agents(6, 0.9, 0.7)


@pytest.fixture
def binary_task():
    return TaskItem("t0", "Is the sky blue?", 2, 0, ("yes", "no"))


@pytest.fixture
def four_way_task():
    return TaskItem("t1", "Which planet is largest?", 4, 2, ("Mars", "Venus", "Jupiter", "Earth"))


def two_agent_chain(c0=1.0, lam1=1.0, c1=0.5):
    return [AgentSpec(0, "solver", c0, 0.0), AgentSpec(1, "reviewer", c1, lam1)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def verdict():
    """Record one acceptance criterion's outcome; returns ``ok`` for asserting."""

    def record(number: int, ok: bool, detail: str) -> bool:
        _VERDICTS[number] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        ok, detail = _VERDICTS[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
