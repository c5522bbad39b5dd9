import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bodyhand.skeleton import SkeletonSequence, build_combined_topology

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_sequence(T=6, V=71, seed=0, topology_name="combined", valid=None, label=0, sid="s"):
    rng = np.random.default_rng(seed)
    coords = rng.normal(size=(3, T, V))
    if valid is None:
        valid = np.ones((T, V), dtype=bool)
        if topology_name == "combined":
            valid[:, 67:] = False
    coords = np.where(valid[None], coords, 0.0)
    return SkeletonSequence(coords, valid, label=label, topology_name=topology_name, id=sid)


@pytest.fixture(scope="session")
def combined():
    return build_combined_topology()


# one PASS/FAIL line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[n])
