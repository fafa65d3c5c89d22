import numpy as np
import pytest

from modfield import systems


@pytest.fixture
def pendulum():
    return systems.get_system("pendulum")


@pytest.fixture
def rigid_body():
    return systems.get_system("rigid_body")


@pytest.fixture
def rng():
    # one fixed generator per test keeps every assertion reproducible
    return np.random.default_rng(20240817)
