import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kaplan import PointCloud


def make_sphere(n, seed, radius=0.5):
    """Uniform points on a sphere with exact radial normals."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return PointCloud(radius * v, v)


def make_noisy_plane(n, seed, sigma=0.005):
    """Unit square in z=0 with Gaussian z-noise; returns (noisy, clean)."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-0.5, 0.5, size=(n, 2))
    z = rng.normal(0.0, sigma, size=n)
    noisy = PointCloud(np.column_stack([xy, z]))
    clean = PointCloud(
        np.column_stack([xy, np.zeros(n)]), np.tile([0.0, 0.0, 1.0], (n, 1))
    )
    return noisy, clean


@pytest.fixture
def sphere_8k():
    return make_sphere(8000, seed=11)


@pytest.fixture
def random_cloud():
    rng = np.random.default_rng(7)
    return PointCloud(rng.uniform(-1, 1, size=(300, 3)))
