import numpy as np
import pytest

from radar_cs.geometry import RadarFrame
from radar_cs.scene import SceneConfig, Target, gen_scene


def make_frame(shape=(40, 32), seed=0, frame_index=1, peak=255.0, az_res=None):
    rng = np.random.default_rng(seed)
    data = rng.uniform(0, peak, size=shape)
    return RadarFrame(data, az_res or 360.0 / shape[0], 0.5, frame_index, peak)


@pytest.fixture
def frame():
    return make_frame()


@pytest.fixture(scope="session")
def small_scene():
    """Two moving targets on a 100 x 64 grid (32 m range)."""
    cfg = SceneConfig(
        n_frames=8, shape=(100, 64), seed=3,
        targets=(Target((8.0, 12.0), (0.3, -0.2), 120.0), Target((-15.0, -5.0), (0.0, 0.4), 100.0)),
    )
    return gen_scene(cfg)
