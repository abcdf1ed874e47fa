"""Shared fixtures: small models and images sized for fast unit tests."""

import numpy as np
import pytest

from saliencybench.model import MicroCnn, MicroCnnConfig
from saliencybench.tensors import Image

SMALL_CONFIG = MicroCnnConfig(in_channels=3, image_size=16,
                              conv_channels=(4, 8), dense_units=(16,),
                              num_classes=4)


def make_image(seed: int = 0, channels: int = 3, size: int = 16) -> Image:
    rng = np.random.default_rng(seed)
    return Image(rng.uniform(0.0, 1.0, (channels, size, size)))


def randomize_biases(model: MicroCnn, seed: int, scale: float = 0.3) -> MicroCnn:
    """He-initialized biases are zero, which makes the raw network scale
    linearly along rays from the origin; shifting them breaks that symmetry
    the way training does."""
    rng = np.random.default_rng(seed)
    named = dict(model.weights_in_order())
    for name, arr in named.items():
        if name.endswith(".bias"):
            named[name] = rng.normal(0.0, scale, size=arr.shape)
    model.set_weights(named)
    return model


@pytest.fixture(scope="session")
def small_model():
    return MicroCnn(SMALL_CONFIG, seed=0)


@pytest.fixture(scope="session")
def biased_model():
    return randomize_biases(MicroCnn(SMALL_CONFIG, seed=0), seed=101)


@pytest.fixture()
def image16():
    return make_image(seed=3)
