import numpy as np
import pytest

from dpc.grid import Grid2, Grid3


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_grid3(rng, B):
    return Grid3(B, rng.normal(size=(2 * B,) * 3))


def random_grid2(rng, B):
    return Grid2(B, rng.normal(size=(2 * B,) * 2))


def blob3(B, center=(0.0, 0.0, 0.0), widths=(2.0, 3.0, 1.5)):
    """Anisotropic Gaussian blob on a centered 3D grid."""
    ax = np.arange(-B, B, dtype=float)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    c, w = center, widths
    return np.exp(-((X - c[0]) ** 2 / w[0] ** 2 + (Y - c[1]) ** 2 / w[1] ** 2 + (Z - c[2]) ** 2 / w[2] ** 2))
