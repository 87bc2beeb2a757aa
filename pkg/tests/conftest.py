import numpy as np
import pytest

from legonet.tensor import Tensor, sum_


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def weighted_sum(out: Tensor, seed: int = 7) -> Tensor:
    """Scalar probe: sum of ``out`` against fixed random weights."""
    w = np.random.default_rng(seed).normal(size=out.shape)
    return sum_(out * w)


def param(rng, *shape, scale=1.0):
    return Tensor(rng.normal(scale=scale, size=shape), requires_grad=True)
