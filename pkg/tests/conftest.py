import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bhroute.model import load_network
from bhroute.traveltime import SolverConfig

settings.register_profile(
    "default", deadline=None, max_examples=40, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

# flow 1 takes the shared middle queue q3; flow 2 can use q3 or q4
FIG2_LATE = 2
FIG2_EARLY = 1


@pytest.fixture
def fig2():
    return load_network("fig2")


@pytest.fixture
def fig2_md1(fig2):
    return fig2.with_service_model("md1")


@pytest.fixture
def solver(fig2):
    return SolverConfig.for_topology(fig2)


def fig2_splits(p_late: float) -> np.ndarray:
    return np.array([1.0, 1.0 - p_late, p_late])


def line_doc(mus, rate=1.0, omega=5.0, service="M"):
    """A single flow through a chain of queues q0 -> q1 -> ..."""
    ids = [f"q{i}" for i in range(len(mus))]
    return {
        "queues": [{"id": q, "mu_max": m, "service": service} for q, m in zip(ids, mus)],
        "edges": [{"from": a, "to": b} for a, b in zip(ids, ids[1:])],
        "flows": [{"id": "1", "ingress": ids[0], "egress": ids[-1], "rate": rate, "omega": omega}],
    }


# one line per acceptance criterion, shown after the test session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
