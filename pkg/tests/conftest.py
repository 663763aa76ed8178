import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tisim.graph import read_instance
from tisim.offline import ConflictMode, cbs_solve

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def bench_a():
    return read_instance("benchmark-a")


@pytest.fixture(scope="session")
def bench_b():
    return read_instance("three-bridge")


@pytest.fixture(scope="session")
def plans():
    """Following-semantics CBS plans for the two small benchmarks, solved once."""
    cache = {}

    def get(name):
        if name not in cache:
            cache[name] = cbs_solve(read_instance(name), ConflictMode.FOLLOWING)
        return cache[name]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results, key=lambda k: (int(k.split("/")[0]), k)):
            terminalreporter.write_line(results[key])
