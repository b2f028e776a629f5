import numpy as np
import pytest


def gaussian_atom(rng, n, confine=0.15):
    """Unit-norm sum of 1-3 chirped Gaussian atoms on the dimensionless grid.

    Centres in time and frequency stay within ``confine * sqrt(n)`` of the
    origin, so the signal is well resolved by an ``n``-point grid in both
    domains (white noise is not, and no discrete FrFT matches the continuous
    kernel on it).
    """
    s = np.sqrt(n)
    t = (np.arange(n) - n // 2) / s
    x = np.zeros(n, dtype=complex)
    for _ in range(rng.integers(1, 4)):
        w = rng.uniform(0.5, 1.5) / np.sqrt(2 * np.pi)
        t0, f0 = rng.uniform(-confine, confine, 2) * s
        c = rng.uniform(-0.3, 0.3)
        amp = rng.normal() + 1j * rng.normal()
        x += amp * np.exp(-((t - t0) ** 2) / (2 * w**2) + 2j * np.pi * f0 * t + 1j * np.pi * c * t**2)
    return x / np.linalg.norm(x)


def random_order(rng, lo=-1.0, hi=1.0, avoid=0.05):
    """Order in [lo, hi] away from 0, where the oracle switches to the identity branch."""
    while True:
        a = rng.uniform(lo, hi)
        if abs(a) >= avoid:
            return a


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def atom():
    return gaussian_atom
