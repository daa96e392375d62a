import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from retexkit.mesh_io import Mesh
from retexkit.shapes import checker_texture, cube, uv_sphere

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def textured_cube():
    return cube(texture=checker_texture(16, 4))


@pytest.fixture
def blob():
    return uv_sphere(rings=6, segments=10, jitter=0.15, rng=np.random.default_rng(7))


def single_triangle(p0, p1, p2) -> Mesh:
    return Mesh(np.array([p0, p1, p2], dtype=np.float64), np.array([[0, 1, 2]]))


def random_reference(rng, h=64, w=64, blob_frac=0.6):
    """Random RGB image with an elliptical foreground mask."""
    img = rng.random((h, w, 3))
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = rng.uniform(0.35, 0.65) * h, rng.uniform(0.35, 0.65) * w
    ry, rx = rng.uniform(0.25, blob_frac) * h, rng.uniform(0.25, blob_frac) * w
    mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    return img, mask


def write_mesh_files(directory, name="blob", seed=7):
    """Textured sphere-ish OBJ plus sibling PNG texture; returns the OBJ path."""
    from retexkit.imaging import save_image
    from retexkit.mesh_io import serialize_mesh

    directory.mkdir(parents=True, exist_ok=True)
    mesh = uv_sphere(rings=6, segments=10, jitter=0.1, rng=np.random.default_rng(seed),
                     texture=checker_texture(16, 4))
    path = directory / f"{name}.obj"
    path.write_text(serialize_mesh(mesh))
    save_image(directory / f"{name}.png", mesh.texture)
    return path
