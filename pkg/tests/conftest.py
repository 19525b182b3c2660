import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from angmeas.empirical import from_uniform, standardize
from angmeas.model import LogisticModel

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

P_VALUES = (1.0, 2.0, math.inf)


@pytest.fixture(scope="session")
def model():
    return LogisticModel(0.5)


@pytest.fixture(scope="session")
def sample500(model):
    return from_uniform(model.sample(500, 11))


@pytest.fixture(scope="session")
def sample200(model):
    return from_uniform(model.sample(200, 7))


@pytest.fixture
def hand():
    return standardize(np.array([[4.0, 4.0], [3.0, 2.0], [2.0, 3.0], [1.0, 1.0]]))
