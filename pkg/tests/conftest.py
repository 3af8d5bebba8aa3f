import numpy as np
import pytest

from duxwb.core import DualExposurePair, Illuminant, RawImage


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_image(rng, height=8, width=12, lo=0.05, hi=0.95):
    return RawImage(rng.uniform(lo, hi, size=(3, height, width)))


def scaled_pair(rng, alpha=0.125, height=8, width=12, gt=None):
    """Clean pair where the short frame is an exact scalar multiple of the long."""
    long_img = random_image(rng, height, width)
    short_img = RawImage(long_img.data * alpha)
    return DualExposurePair(long=long_img, short=short_img, exposure_factor=8.0,
                            ground_truth=gt or Illuminant(1.0, 1.0, 1.0).normalized())


@pytest.fixture
def make_image():
    return random_image


@pytest.fixture
def make_scaled_pair():
    return scaled_pair
