import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from viewqa.cloud import PointCloud, summarize
from viewqa.synth import make_demo_clouds
from viewqa.viewgeom import default_viewpoints


@pytest.fixture(scope="session")
def small_clouds():
    return make_demo_clouds(3, points=600, seed=11)


@pytest.fixture()
def cube_corners():
    pts = np.array(
        [[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)]
    )
    cols = np.tile([200, 100, 50], (8, 1))
    return PointCloud(pts, cols, "cube")


@pytest.fixture()
def plus_x_view(cube_corners):
    return default_viewpoints(summarize(cube_corners), 1.25)[0]


def dyadic_cloud(rng, n, span=1.0):
    """Random cloud on a power-of-two lattice so translations stay exact."""
    pts = rng.integers(0, 2 ** 20, size=(n, 3)) / 2 ** 20 * span
    cols = rng.integers(0, 256, size=(n, 3))
    return PointCloud(pts, cols, "dyadic")
