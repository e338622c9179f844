import numpy as np
import pytest

from rhfpt.validation import double_well, ring_degenerate, ring_nondegenerate


@pytest.fixture(scope="session")
def ring_nd():
    return ring_nondegenerate()


@pytest.fixture(scope="session")
def ring_deg():
    return ring_degenerate()


@pytest.fixture(scope="session")
def well():
    return double_well()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
