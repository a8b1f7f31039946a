import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from upomdp.models import toy_two_state
from upomdp.polynomial import Polynomial
from upomdp.pomdp import bvar

settings.register_profile("default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))


@pytest.fixture
def toy():
    return toy_two_state()


@pytest.fixture
def b1():
    return Polynomial.var(bvar("q1"))


@pytest.fixture
def b2():
    return Polynomial.var(bvar("q2"))
