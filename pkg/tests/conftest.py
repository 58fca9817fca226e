import pytest
from hypothesis import settings

from kernels import brownian_wn, fbm, singular
from measures import Interval

settings.register_profile("numerics", deadline=None, max_examples=100)
settings.load_profile("numerics")

FBM_SELFINT = 0.5
FBM_QUASI = 0.5 - 0.75 * 3.141592653589793 / 16 - 0.1875


@pytest.fixture
def unit():
    return Interval(0.0, 1.0)


@pytest.fixture
def fbm_kernel():
    return fbm(0.75)


@pytest.fixture
def brownian_kernel():
    return brownian_wn()


@pytest.fixture
def singular_kernel():
    return singular()
