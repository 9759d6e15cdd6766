import numpy as np
import pytest

from cvarsgd.datagen import StreamSpec, materialize_population
from cvarsgd.losses import RidgeLoss


@pytest.fixture
def spec():
    return StreamSpec("ridge_paper", seed=11)


@pytest.fixture
def ridge(spec):
    return RidgeLoss(0.1, x_sq_mean=spec.x_sq_mean)


@pytest.fixture
def small_pop(spec):
    return materialize_population(spec, 2000)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
