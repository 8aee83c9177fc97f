import sys
import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ecsupg.discretization import Discretization
from ecsupg.mesh import build_mesh

settings.register_profile(
    "default", deadline=None, max_examples=20, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def torus_disc():
    return Discretization(build_mesh(4, 4, 1.0, 1.0, periodic_z=True), 2, "swe")


@pytest.fixture(scope="session")
def slab_disc():
    return Discretization(build_mesh(4, 3, 1.0, 1.0, periodic_z=False), 2, "euler")


@pytest.fixture(autouse=True)
def _quiet_coercivity():
    from ecsupg.operators import CoercivityWarning

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoercivityWarning)
        yield


def pytest_terminal_summary(terminalreporter):
    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance") and getattr(mod, "REPORT", None):
            terminalreporter.section("acceptance criteria")
            for line in mod.summary_lines():
                terminalreporter.write_line(line)
