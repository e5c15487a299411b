import math

import numpy as np
import pytest

from membrane.fem import SolverConfig
from membrane.mesh import DomainSpec, build_mesh


@pytest.fixture(scope="session")
def disk0():
    return build_mesh(DomainSpec.disk(1.0, 64, 0))


@pytest.fixture(scope="session")
def disk1():
    return build_mesh(DomainSpec.disk(1.0, 64, 1))


@pytest.fixture(scope="session")
def disk2():
    return build_mesh(DomainSpec.disk(1.0, 64, 2))


@pytest.fixture(scope="session")
def coarse_disk():
    return build_mesh(DomainSpec.disk(1.0, 16, 0))


@pytest.fixture(scope="session")
def square1():
    return build_mesh(DomainSpec.square(1.0, 32, 1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def cfg(p=2.0, **kw):
    return SolverConfig(p=p, **kw)


TWO_PI = 2 * math.pi
