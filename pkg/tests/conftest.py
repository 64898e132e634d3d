import numpy as np
import pytest
from scipy import ndimage

from retinex_nets.networks import NetConfig
from tensor_core.tensor import default_dtype


def natural_image(seed, size=64, channels=3):
    '''Smooth random field with a ramp, a bright block and fine texture, in (0, 1).'''

    rng = np.random.default_rng(seed)
    coarse = ndimage.gaussian_filter(rng.standard_normal((size, size, channels)),
                                     sigma=(4, 4, 0))
    coarse /= coarse.std() + 1e-12
    fine = ndimage.gaussian_filter(rng.standard_normal((size, size, channels)),
                                   sigma=(0.8, 0.8, 0))
    ramp = np.linspace(-0.5, 0.5, size)[None, :, None]
    image = 0.45 + 0.12 * coarse + 0.2 * ramp + 0.04 * fine
    top, left = rng.integers(size // 8, size // 2, size=2)
    image[top:top + size // 4, left:left + size // 4] += 0.2
    return np.clip(image, 0.02, 0.98)


def small_net_config(**overrides):
    values = dict(depth_levels=3, base_channels=4, dense_growth=4, dense_layers=2,
                  input_size=16)
    values.update(overrides)
    return NetConfig(**values)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def make_image():
    return natural_image


@pytest.fixture
def float64():
    with default_dtype(np.float64):
        yield


@pytest.fixture
def make_config():
    return small_net_config
