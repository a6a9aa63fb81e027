import numpy as np
import pytest

import oracles


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)


@pytest.fixture(scope="session")
def euclidean():
    return oracles.euclidean()


@pytest.fixture(scope="session")
def sphere():
    return oracles.sphere()


@pytest.fixture(scope="session")
def randers_half():
    return oracles.randers_half()


@pytest.fixture(scope="session")
def randers_curved():
    return oracles.randers_curved()


@pytest.fixture(scope="session")
def generic_convex():
    return oracles.generic_convex()
