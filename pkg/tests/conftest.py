"""Shared fixtures for the pds-sampler test suites."""

import numpy as np
import pytest

from pds_sampler.grid import Field, GridShape


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def small_shape():
    return GridShape(1, 4, 4)


@pytest.fixture
def random_field(rng):
    def make(shape, low=-1.0, high=1.0):
        return Field(rng.uniform(low, high, size=shape.as_tuple()))

    return make
