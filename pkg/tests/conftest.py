import logging

import numpy as np
import pytest

from fedcm.model import Batch, LayerShape, init_weights

# The server-side matcher warns whenever a cluster finds no admissible model;
# that is routine in early rounds and would swamp test output.
logging.getLogger("fedcm.matching").setLevel(logging.ERROR)


@pytest.fixture
def small_shape() -> LayerShape:
    return LayerShape(2, (3,), 2)


@pytest.fixture
def small_weights(small_shape):
    return init_weights(small_shape, seed=0)


def random_batch(shape: LayerShape, n: int, seed: int) -> Batch:
    rng = np.random.default_rng(seed)
    return Batch(rng.normal(size=(n, shape.input_dim)),
                 rng.integers(0, shape.output_dim, size=n))
