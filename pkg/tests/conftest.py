import numpy as np
import pytest

from splatedit.scene import Camera, GaussianScene
from splatedit.sh import dc_from_color


def make_scene(positions, colors=None, opacity_raw=0.0, log_scale=np.log(0.05),
               ids=None, bg=(0.0, 0.0, 0.0), features=None, rotations=None,
               sh_rest=None):
    """Small-scene builder for tests: constant color per splat, axis-aligned."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    n = len(positions)
    if colors is None:
        colors = np.tile([0.8, 0.2, 0.2], (n, 1))
    colors = np.atleast_2d(np.asarray(colors, dtype=np.float64))
    o = np.asarray(opacity_raw, dtype=np.float64)
    if o.ndim == 0:
        o = np.full(n, float(o))
    ls = np.asarray(log_scale, dtype=np.float64)
    if ls.ndim == 0:
        ls = np.full((n, 3), float(ls))
    elif ls.ndim == 1:
        ls = np.repeat(ls[:, None], 3, axis=1)
    if rotations is None:
        rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    return GaussianScene(
        positions=positions,
        log_scales=ls,
        rotations=np.asarray(rotations, dtype=np.float64),
        opacities_raw=o,
        sh_dc=dc_from_color(colors),
        sh_rest=np.zeros((n, 3, 15)) if sh_rest is None else sh_rest,
        features=np.zeros((n, 16)) if features is None else np.asarray(features, float),
        object_ids=None if ids is None else np.asarray(ids, dtype=np.int32),
        background=np.asarray(bg, dtype=np.float64),
    )


def axis_camera(width=9, height=9, fx=100.0, fy=None):
    """Camera at the origin looking down +z (COLMAP axes), centered pp."""
    return Camera(fx=fx, fy=fy if fy is not None else fx,
                  cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                  width=width, height=height,
                  rotation=np.eye(3), translation=np.zeros(3))


def random_scene(rng, n, depth_range=(1.0, 4.0), xy=0.8, with_ids=False):
    scene = make_scene(
        positions=np.column_stack([
            rng.uniform(-xy, xy, n), rng.uniform(-xy, xy, n),
            rng.uniform(*depth_range, n)]),
        colors=rng.uniform(0.1, 0.9, (n, 3)),
        opacity_raw=rng.uniform(-2.0, 2.0, n),
        log_scale=rng.uniform(np.log(0.03), np.log(0.3), n),
        rotations=rng.normal(size=(n, 4)),
        ids=rng.integers(0, 4, n) if with_ids else None,
        features=rng.normal(size=(n, 16)),
    )
    return scene


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
