import numpy as np
import pytest

from smallbody.core_types import Particle, make_plane_wave


@pytest.fixture
def wave():
    return make_plane_wave([1, 0, 0], [0, 0, 1], 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def ball(center=(0, 0, 0), a=0.05, gamma=1.0, kappa=1.0):
    return Particle(np.asarray(center, float), a, gamma, kappa)
