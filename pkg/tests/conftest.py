import numpy as np
import pytest

from kspara.spectral_core import Lattice


def random_field(lat: Lattice, rng, lead=(), mean_free=False, decay=0.0):
    c = rng.normal(size=lead + lat.shape) + 1j * rng.normal(size=lead + lat.shape)
    if decay:
        c = c * (1.0 + lat.norm2) ** (-decay / 2)
    c = lat.hermitize(c)
    if mean_free:
        c[..., lat.N, lat.N] = 0.0
    return c


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
