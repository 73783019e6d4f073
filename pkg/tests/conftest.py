import numpy as np
import pytest

from qxc.system import InteractionKernel, build_grid


@pytest.fixture
def small_grid():
    return build_grid(-8.0, 8.0, 65)


@pytest.fixture
def kernel():
    return InteractionKernel()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_difference(fun, x, index, step=1e-6):
    e = np.zeros_like(x)
    e[index] = step
    return (fun(x + e) - fun(x - e)) / (2 * step)
