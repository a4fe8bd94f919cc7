import numpy as np
import pytest

from wmtrace.codecs import fit_key_whitening, keygen
from wmtrace.imaging import seed_corpus, seed_image

# Vanilla images for whitening come from a seed range disjoint from test images.
VANILLA_OFFSET = 5000


@pytest.fixture(scope="session")
def ss_key():
    """Spread-spectrum key whitened on a small vanilla corpus (unit-test scale)."""
    vanilla = seed_corpus(120, size=192, offset=VANILLA_OFFSET)
    return fit_key_whitening(keygen("spreadspectrum", 48, 11), vanilla)


@pytest.fixture(scope="session")
def dct_key():
    return keygen("dctdwt", 48, 12)


@pytest.fixture(scope="session")
def image512():
    return seed_image(0)


@pytest.fixture(scope="session")
def small_images():
    return seed_corpus(4, size=256)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
