import numpy as np
import pytest

from palpsim import phantom as ph
from palpsim.config import RunConfig
from palpsim.phantom import BilinearField, PhantomModel


@pytest.fixture(scope="session")
def default_model():
    return ph.load_default_neck()


@pytest.fixture
def quiet_config():
    """Deterministic config: sensor noise off."""
    cfg = RunConfig()
    cfg.plant.sensor_noise_sigma = 0.0
    return cfg


def grid_phantom(height_fn, stiffness_fn, x_bounds=(-50.0, 50.0),
                 y_bounds=(-50.0, 50.0), z_bounds=(-50.0, 60.0),
                 step=1.0, landmarks=None, boundary=None):
    """Programmatic phantom for physics tests (bypasses the file loader)."""
    xs = np.arange(x_bounds[0], x_bounds[1] + step / 2, step)
    ys = np.arange(y_bounds[0], y_bounds[1] + step / 2, step)
    H = np.array([[height_fn(x, y) for x in xs] for y in ys])
    K = np.array([[stiffness_fn(x, y) for x in xs] for y in ys])
    height = BilinearField(xs[0], ys[0], step, step, H)
    stiff = BilinearField(xs[0], ys[0], step, step, K)
    gy, gx = np.gradient(H, step, step)
    if boundary is None:
        boundary = np.array([[0.0, 0.0, height_fn(0.0, 0.0)],
                             [1.0, 0.0, height_fn(1.0, 0.0)],
                             [0.0, 1.0, height_fn(0.0, 1.0)]])
    return PhantomModel(
        x_bounds=tuple(x_bounds), y_bounds=tuple(y_bounds),
        z_bounds=tuple(z_bounds),
        height=height, stiffness=stiff,
        landmarks=landmarks or {}, membrane_boundary=np.asarray(boundary, float),
        grad_x=BilinearField(xs[0], ys[0], step, step, gx),
        grad_y=BilinearField(xs[0], ys[0], step, step, gy),
    )


@pytest.fixture
def flat_phantom():
    """Factory: flat surface at z=10 with uniform stiffness k."""
    def make(k=1.0, z0=10.0):
        return grid_phantom(lambda x, y: z0, lambda x, y: k)
    return make
