"""Synthetic scene generation: the test oracle for the editing pipeline.

A synth spec describes opaque colored blobs (with ground-truth object ids),
an optional textured backdrop plane (optionally with a circular hole that
models a never-observed region), and a ring of cameras. Ground-truth label
maps are id-channel renders of the generated scene.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

from .raster import render
from .scene import Camera, GaussianScene, FEATURE_DIM, look_at_camera
from .sh import dc_from_color

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib


def load_synth_spec(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _nn_spacing(points: np.ndarray) -> np.ndarray:
    if len(points) < 2:
        return np.full(len(points), 0.1)
    dist, _ = cKDTree(points).query(points, k=2)
    return dist[:, 1]


def _blob_splats(blob: dict, rng: np.random.Generator):
    count = int(blob["count"])
    center = np.asarray(blob["center"], dtype=np.float64)
    spread = float(blob["spread"])
    pos = center + rng.normal(scale=spread, size=(count, 3))
    spacing = _nn_spacing(pos)
    scale = np.log(np.maximum(spacing * float(blob.get("scale_factor", 1.1)), 1e-6))
    color = np.asarray(blob["color"], dtype=np.float64)
    opacity = float(blob.get("opacity", 0.95))
    return pos, scale, color, opacity


def _texture(x: np.ndarray, y: np.ndarray, params: dict) -> np.ndarray:
    """Smooth low-frequency color field over a plane."""
    base = np.asarray(params.get("base", (0.55, 0.5, 0.45)), dtype=np.float64)
    amp = float(params.get("amplitude", 0.25))
    period = float(params.get("period", 2.8))
    w = 2.0 * math.pi / period
    c = np.stack([
        base[0] + amp * np.sin(w * x + 0.3),
        base[1] + amp * np.sin(w * y + 1.1),
        base[2] + amp * np.sin(w * (x + y) * 0.5 + 2.0),
    ], axis=1)
    return np.clip(c, 0.05, 0.95)


def _backdrop_splats(spec: dict, rng: np.random.Generator):
    extent = float(spec.get("extent", 3.0))
    spacing = float(spec.get("spacing", 0.06))
    z0 = float(spec.get("z", 0.0))
    side = int(round(2 * extent / spacing)) + 1
    xs = np.linspace(-extent, extent, side)
    gx, gy = np.meshgrid(xs, xs)
    pos = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z0)])
    pos[:, :2] += rng.normal(scale=spacing * 0.08, size=(gx.size, 2))
    hole = spec.get("hole")
    if hole:
        hc = np.asarray(hole["center"], dtype=np.float64)[:2]
        r = float(hole["radius"])
        keep = np.linalg.norm(pos[:, :2] - hc, axis=1) > r
        pos = pos[keep]
    colors = _texture(pos[:, 0], pos[:, 1], spec)
    # 1.3x spacing keeps the plane solidly opaque (alpha ~1) between centers
    scale = np.full(len(pos), np.log(spacing * float(spec.get("scale_factor", 1.3))))
    opacity = float(spec.get("opacity", 0.97))
    return pos, scale, colors, opacity


def _ring_cameras(spec: dict) -> list[Camera]:
    ring = spec["ring"]
    img = spec["image"]
    width, height = int(img["width"]), int(img["height"])
    count = int(ring["count"])
    radius = float(ring["radius"])
    h = float(ring.get("height", radius * 0.6))
    target = np.asarray(ring.get("target", (0.0, 0.0, 0.0)), dtype=np.float64)
    fov = math.radians(float(ring.get("fov_deg", 55.0)))
    fx = (width / 2.0) / math.tan(fov / 2.0)
    cams = []
    for k in range(count):
        ang = 2.0 * math.pi * k / count
        eye = target + np.array([radius * math.cos(ang), radius * math.sin(ang), h])
        cams.append(look_at_camera(eye, target, up=(0.0, 0.0, 1.0),
                                   fx=fx, fy=fx,
                                   cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                                   width=width, height=height))
    return cams


def synth_scene(spec: dict):
    """Build (scene, cameras, ground-truth label maps) from a synth spec.

    The label maps are exact id-channel renders of the generated scene, so
    they serve as the oracle for association/distillation/removal tests.
    """
    rng = np.random.default_rng(int(spec.get("seed", 0)))
    positions, log_scales, dc, o_raw, ids = [], [], [], [], []

    if "backdrop" in spec:
        pos, scale, colors, opacity = _backdrop_splats(spec["backdrop"], rng)
        positions.append(pos)
        log_scales.append(np.repeat(scale[:, None], 3, axis=1))
        dc.append(dc_from_color(colors))
        o_raw.append(np.full(len(pos), _logit(opacity)))
        ids.append(np.zeros(len(pos), np.int32))

    for blob in spec.get("blobs", ()):
        pos, scale, color, opacity = _blob_splats(blob, rng)
        positions.append(pos)
        log_scales.append(np.repeat(scale[:, None], 3, axis=1))
        dc.append(np.tile(dc_from_color(color), (len(pos), 1)))
        o_raw.append(np.full(len(pos), _logit(opacity)))
        ids.append(np.full(len(pos), int(blob["object_id"]), np.int32))

    n = sum(len(p) for p in positions)
    if n == 0:
        raise ValueError("synth spec describes no splats")
    scene = GaussianScene(
        positions=np.concatenate(positions),
        log_scales=np.concatenate(log_scales),
        rotations=np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1)),
        opacities_raw=np.concatenate(o_raw),
        sh_dc=np.concatenate(dc),
        sh_rest=np.zeros((n, 3, 15)),
        features=np.zeros((n, FEATURE_DIM)),
        object_ids=np.concatenate(ids),
        background=np.asarray(spec.get("background", (0.0, 0.0, 0.0)),
                              dtype=np.float64),
    )
    scene.validate()
    cameras = _ring_cameras(spec)
    label_maps = [render(scene, cam, channels=("id",)).id_map for cam in cameras]
    return scene, cameras, label_maps


def object_free_variant(spec: dict) -> dict:
    """The ground-truth counterpart: no blobs, backdrop without its hole."""
    out = {k: v for k, v in spec.items() if k != "blobs"}
    out["blobs"] = []
    if "backdrop" in out:
        out["backdrop"] = {k: v for k, v in out["backdrop"].items() if k != "hole"}
    return out


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))
