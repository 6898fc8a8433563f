import numpy as np
import pytest

from multibubble import geometry
from multibubble.green import DiskGreen, GridGreen

STAR_COEFFS = ((1.0,), (0.0, 0.0), (0.0, 0.0), (0.1, 0.0))  # r = 1 + 0.1 cos(3 theta)


@pytest.fixture(scope="session")
def disk():
    return geometry.unit_disk()


@pytest.fixture(scope="session")
def star():
    return geometry.star_domain(STAR_COEFFS, collar_width=0.18)


@pytest.fixture(scope="session")
def disk_green(disk):
    return DiskGreen(disk)


@pytest.fixture(scope="session")
def grid_green_disk(disk):
    return GridGreen(disk, grid_n=256)


@pytest.fixture(scope="session")
def grid_green_star(star):
    return GridGreen(star, grid_n=256)


def sample_disk_points(rng, count, radius=0.6):
    """Uniform points in a centered disk of the given radius."""
    out = []
    while len(out) < count:
        p = rng.uniform(-radius, radius, 2)
        if p @ p < radius * radius:
            out.append(p)
    return np.array(out)


def sample_star_points(domain, rng, count, margin=0.25):
    out = []
    while len(out) < count:
        p = rng.uniform(-1.1, 1.1, 2)
        if geometry.contains(domain, p) and geometry.dist_to_boundary(domain, p) > margin:
            out.append(p)
    return np.array(out)
