import pytest

from deepsurfels import FitConfig, build
from deepsurfels.scenegen import make_scene, orbit_cameras, render_gt


@pytest.fixture(scope="session")
def checker_scene():
    return make_scene("checker-sphere")


@pytest.fixture(scope="session")
def small_model(checker_scene):
    """8^3 grid, 4x4 patches on the checker sphere, unfused."""
    cfg = FitConfig.for_bounds(*checker_scene.bounds, 8, patch_res=4)
    return build(checker_scene.field, cfg)


@pytest.fixture(scope="session")
def small_views(checker_scene):
    cams = orbit_cameras(6, 2.2, width=40, height=40)
    return cams, [render_gt(checker_scene, c) for c in cams]
