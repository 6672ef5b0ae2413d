import numpy as np
import pytest

from swinfer import tensor as T


@pytest.fixture(autouse=True)
def _restore_precision():
    """Precision is global run state; leave every test at the 32-bit default."""
    yield
    T.set_precision(32)


@pytest.fixture
def fp64():
    """Run a test in the 64-bit verification mode, restoring 32-bit after."""
    with T.precision(64):
        yield


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))
