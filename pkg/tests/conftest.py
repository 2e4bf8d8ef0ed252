import numpy as np
import pytest
from hypothesis import settings

from roadhazard.pointcloud import PointCloud

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


def grid_cloud(n=21, spacing=0.1, z=0.0, sensor_height=10.0):
    xs = np.arange(n) * spacing
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    verts = np.column_stack([gx.ravel(), gy.ravel(), np.full(n * n, z)])
    return PointCloud(verts, sensor_origin=(xs.mean(), xs.mean(), z + sensor_height))


@pytest.fixture
def flat_grid():
    return grid_cloud()
