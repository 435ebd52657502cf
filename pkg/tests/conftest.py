"""Shared fixtures for the test suite."""

import numpy as np
import pytest

from metamorph import EnergyParams


@pytest.fixture
def params() -> EnergyParams:
    return EnergyParams()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
