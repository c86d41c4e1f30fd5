import numpy as np
import pytest

from lidarocc.geom import CartesianGrid, SphericalGrid


@pytest.fixture
def kitti_grid() -> SphericalGrid:
    return SphericalGrid.from_degrees(
        (2.24, 70.72), (-40.69, 40.69), (-16.60, 4.00), (0.32, 0.52, 0.42)
    )


@pytest.fixture
def small_grid() -> SphericalGrid:
    return SphericalGrid.from_degrees((1.0, 9.0), (-30.0, 30.0), (-15.0, 15.0), (0.5, 5.0, 5.0))


@pytest.fixture
def small_cart_grid() -> CartesianGrid:
    return CartesianGrid((0.0, 8.0), (-4.0, 4.0), (-2.0, 2.0), (0.5, 0.5, 0.5))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
