import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mftorus.torus import UNIT_SQUARE, TorusLattice, TranslationGroup

settings.register_profile(
    "default", max_examples=25, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")


@pytest.fixture
def half_shift():
    """The two-element group {0, (1/2, 0)} on the unit square torus."""
    return TranslationGroup.cyclic(2, "a")


@pytest.fixture
def skew():
    return TorusLattice((1.0, 0.0), (0.3, 1.2))


def band_limited(rng, n, lattice=UNIT_SQUARE, modes=5, mean_zero=True):
    from mftorus.spectral import GridField

    s = np.arange(n)[:, None] / n
    t = np.arange(n)[None, :] / n
    v = np.zeros((n, n))
    for m in range(-modes, modes + 1):
        for k in range(-modes, modes + 1):
            if m == 0 and k == 0:
                continue
            a, b = rng.normal(size=2)
            v = v + a * np.cos(2 * np.pi * (m * s + k * t)) + b * np.sin(2 * np.pi * (m * s + k * t))
    if not mean_zero:
        v = v + rng.normal()
    return GridField(v, lattice)
