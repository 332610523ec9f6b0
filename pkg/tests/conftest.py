import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from yamabe_atlas import build_sphere_atlas, build_torus_atlas

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow,
                                                 HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def torus1():
    return build_torus_atlas(3, 1, grid_n=16)


@pytest.fixture(scope="session")
def torus8():
    return build_torus_atlas(3, 2, 0.25, grid_n=24)


@pytest.fixture(scope="session")
def sphere24():
    return build_sphere_atlas(1.0, 24)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    lines = []
    for mod in list(sys.modules.values()):
        lines.extend(getattr(mod, "ACCEPTANCE_RESULTS", []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
