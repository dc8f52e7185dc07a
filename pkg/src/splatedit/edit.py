"""Object selection, removal, virtual trajectories, and exposure masks.

The exposure mask (the region an object removal leaves uncovered) is derived
geometrically: a pixel needs inpainting when it belonged to the removed
object and the edited scene does not show a credible, already-reconstructed
surface there (solid coverage at a genuinely different depth).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage as ndi
from scipy.spatial import ConvexHull, QhullError

from .raster import RenderOutput, render
from .scene import Camera, GaussianScene, SceneError, look_at_camera

ALPHA_SOLID = 0.95
DEPTH_REL_CHANGE = 0.02
MASK_AREA_BAND = (0.01, 0.50)
RADIUS_CLAMP = (0.25, 2.0)
BISECTION_STEPS = 12


class EditError(SceneError):
    pass


@dataclass
class RemovalRecord:
    """Everything needed to undo a removal bit-exactly."""

    removed_ids: list
    removed_indices: np.ndarray     # positions in the ORIGINAL splat order
    removed_scene: GaussianScene    # the removed splats, original order
    hull: bool

    def restore(self, scene: GaussianScene) -> GaussianScene:
        """Reinsert the removed splats at their original indices."""
        n_total = len(scene) + len(self.removed_scene)
        removed_pos = np.asarray(self.removed_indices)
        keep_pos = np.setdiff1d(np.arange(n_total), removed_pos)
        out = _allocate_like(scene, n_total)
        _scatter(out, keep_pos, scene)
        _scatter(out, removed_pos, self.removed_scene)
        return out


def _allocate_like(scene: GaussianScene, n: int) -> GaussianScene:
    return GaussianScene(
        positions=np.empty((n, 3)),
        log_scales=np.empty((n, 3)),
        rotations=np.empty((n, 4)),
        opacities_raw=np.empty(n),
        sh_dc=np.empty((n, 3)),
        sh_rest=np.empty((n, 3, 15)),
        features=np.empty((n, scene.features.shape[1])),
        object_ids=np.empty(n, np.int32) if scene.object_ids is not None else None,
        background=scene.background.copy(),
        classifier=None if scene.classifier is None else scene.classifier.copy(),
    )


def _scatter(dst: GaussianScene, where: np.ndarray, src: GaussianScene) -> None:
    dst.positions[where] = src.positions
    dst.log_scales[where] = src.log_scales
    dst.rotations[where] = src.rotations
    dst.opacities_raw[where] = src.opacities_raw
    dst.sh_dc[where] = src.sh_dc
    dst.sh_rest[where] = src.sh_rest
    dst.features[where] = src.features
    if dst.object_ids is not None and src.object_ids is not None:
        dst.object_ids[where] = src.object_ids


def pick_object(scene: GaussianScene, camera: Camera, x: int, y: int):
    """Object id rendered at pixel (x, y), or None on background."""
    if not (0 <= x < camera.width and 0 <= y < camera.height):
        raise EditError(f"pixel ({x}, {y}) out of bounds")
    if scene.object_ids is None:
        raise EditError("scene has no baked object ids")
    out = render(scene, camera, channels=("id",))
    value = int(out.id_map[y, x])
    return value if value > 0 else None


def _points_in_hull(points: np.ndarray, hull_points: np.ndarray) -> np.ndarray:
    """Half-space membership test against the convex hull of hull_points."""
    if len(hull_points) < 4:
        return np.zeros(len(points), dtype=bool)
    try:
        hull = ConvexHull(hull_points)
    except QhullError:  # degenerate (coplanar/collinear) set: skip expansion
        return np.zeros(len(points), dtype=bool)
    eq = hull.equations  # (F, 4): normal | offset, inside <= 0
    return np.all(points @ eq[:, :3].T + eq[:, 3] <= 1e-9, axis=1)


def remove_object(scene: GaussianScene, ids, hull: bool = False):
    """Remove all splats with the given object ids.

    With `hull` set, remaining splats whose centers fall inside the convex
    hull of the removed centers are captured as well. Returns the edited
    scene and a RemovalRecord that restores the original bit-exactly.
    """
    if scene.object_ids is None:
        raise EditError("scene has no baked object ids")
    ids = [int(i) for i in (ids if np.iterable(ids) else [ids])]
    present = set(scene.present_object_ids().tolist())
    unknown = [i for i in ids if i not in present]
    if unknown:
        raise EditError(f"unknown object id(s): {unknown}")
    direct = np.isin(scene.object_ids, ids)
    removed = direct.copy()
    if hull and direct.sum() >= 4:
        inside = _points_in_hull(scene.positions, scene.positions[direct])
        removed |= inside
    removed_idx = np.nonzero(removed)[0]
    record = RemovalRecord(
        removed_ids=ids,
        removed_indices=removed_idx,
        removed_scene=scene.subset(removed_idx),
        hull=hull,
    )
    return scene.subset(np.nonzero(~removed)[0]), record


def object_center(scene: GaussianScene, obj_id: int) -> np.ndarray:
    if scene.object_ids is None:
        raise EditError("scene has no baked object ids")
    member = scene.object_ids == obj_id
    if not member.any():
        raise EditError(f"object id {obj_id} has no member splats")
    return scene.positions[member].mean(axis=0)


def nbs_mask(scene_before: GaussianScene, scene_after: GaussianScene,
             camera: Camera) -> np.ndarray:
    """Pixels exposed by a removal that no reconstructed surface covers.

    A pixel is masked when the pre-removal id map shows a removed id there
    and the post-removal render is not a solid surface at a clearly
    different depth (alpha < 0.95, or depth within 2% of the pre-removal
    depth, meaning leftover shell content rather than revealed background).
    The raw mask is morphologically closed (radius 2) then dilated 1 px.
    """
    before_ids = set((scene_before.present_object_ids()).tolist())
    after_ids = set((scene_after.present_object_ids()).tolist()) \
        if scene_after.object_ids is not None else set()
    removed = sorted(before_ids - after_ids)
    if not removed:
        return np.zeros((camera.height, camera.width), dtype=bool)
    out_b = render(scene_before, camera, channels=("id", "depth"))
    out_a = render(scene_after, camera, channels=("depth",))
    in_removed = np.isin(out_b.id_map, removed)
    depth_b = out_b.depth_normalized
    depth_a = out_a.depth_normalized
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(depth_a - depth_b) / np.maximum(depth_b, 1e-12)
    solid_new_surface = (out_a.alpha >= ALPHA_SOLID) & (rel > DEPTH_REL_CHANGE)
    raw = in_removed & ~solid_new_surface
    closed = ndi.binary_closing(raw, structure=_disk(2))
    return ndi.binary_dilation(closed, structure=_disk(1))


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return (xx * xx + yy * yy) <= radius * radius


@dataclass
class VirtualView:
    """A synthesized orbit view with its render products and exposure mask."""

    camera: Camera
    color: np.ndarray
    depth: np.ndarray     # alpha-normalized metric depth
    mask: np.ndarray
    alpha: np.ndarray = None


def _orbit_plane(centers: np.ndarray):
    """PCA of camera centers: (plane normal = smallest component, in-plane basis)."""
    mean = centers.mean(axis=0)
    _, _, vt = np.linalg.svd(centers - mean, full_matrices=False)
    normal = vt[-1]
    e1 = vt[0]
    return normal, e1


def virtual_trajectory(scene_before: GaussianScene, scene_after: GaussianScene,
                       cameras, obj_id: int, count: int = 30):
    """Cameras on a circle around the removed object.

    The orbit plane comes from a PCA over the training camera centers
    (nearest 90% to the object); the circle is centered over the object at
    the mean training-camera height along the plane normal, and its radius
    is bisected (<= 12 steps) until the first pose's exposure mask covers
    1..50% of the image, clamped to [0.25x, 2x] the mean camera distance.
    """
    if len(cameras) < 3:
        raise EditError("need at least 3 training cameras")
    center = object_center(scene_before, obj_id)
    cam_centers = np.stack([c.center for c in cameras])
    dist = np.linalg.norm(cam_centers - center, axis=1)
    keep = np.argsort(dist, kind="stable")[:max(3, int(np.ceil(0.9 * len(cameras))))]
    sel = cam_centers[keep]
    normal, e1 = _orbit_plane(sel)
    if normal @ (sel.mean(axis=0) - center) < 0:
        normal = -normal  # orient toward the cameras
    height = float(((sel - center) @ normal).mean())
    circle_center = center + normal * height
    e1 = e1 - (e1 @ normal) * normal
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    mean_dist = float(dist[keep].mean())
    proto = cameras[0]

    def build(radius):
        cams = []
        for k in range(count):
            ang = 2.0 * np.pi * k / count
            eye = circle_center + radius * (np.cos(ang) * e1 + np.sin(ang) * e2)
            cams.append(look_at_camera(
                eye, center, up=normal, fx=proto.fx, fy=proto.fy,
                cx=proto.cx, cy=proto.cy, width=proto.width, height=proto.height))
        return cams

    def first_mask_area(radius):
        cam = build(radius)[0]
        mask = nbs_mask(scene_before, scene_after, cam)
        return mask.mean()

    lo, hi = RADIUS_CLAMP[0] * mean_dist, RADIUS_CLAMP[1] * mean_dist
    # mask area shrinks as the camera moves away; bisect toward the band
    area_lo, area_hi = first_mask_area(lo), first_mask_area(hi)
    radius = None
    if MASK_AREA_BAND[0] <= area_lo <= MASK_AREA_BAND[1]:
        radius = lo
    elif MASK_AREA_BAND[0] <= area_hi <= MASK_AREA_BAND[1]:
        radius = hi
    elif area_lo < MASK_AREA_BAND[0]:
        warnings.warn("exposure mask below 1% even at the closest radius")
        radius = lo
    elif area_hi > MASK_AREA_BAND[1]:
        warnings.warn("exposure mask above 50% even at the farthest radius")
        radius = hi
    if radius is None:
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            area = first_mask_area(mid)
            if MASK_AREA_BAND[0] <= area <= MASK_AREA_BAND[1]:
                radius = mid
                break
            if area > MASK_AREA_BAND[1]:
                lo = mid
            else:
                hi = mid
        else:
            radius = 0.5 * (lo + hi)
            warnings.warn("radius search did not reach the mask-area band")
    return build(radius)


def make_virtual_views(scene_before: GaussianScene, scene_after: GaussianScene,
                       cameras) -> list:
    """Render color/depth and the exposure mask for each virtual camera."""
    views = []
    for cam in cameras:
        out = render(scene_after, cam, channels=("color", "depth"))
        mask = nbs_mask(scene_before, scene_after, cam)
        views.append(VirtualView(camera=cam, color=out.color,
                                 depth=out.depth_normalized, mask=mask,
                                 alpha=out.alpha))
    return views


def detect_occluders(scene: GaussianScene, target_id: int, views) -> list:
    """Ids whose footprint overlaps the target's (5 px dilated) from nearer depth."""
    if scene.object_ids is None:
        raise EditError("scene has no baked object ids")
    occluders = set()
    for cam in views:
        out = render(scene, cam, channels=("id", "depth"))
        target_fp = out.id_map == target_id
        if not target_fp.any():
            continue
        near_fp = ndi.binary_dilation(target_fp, structure=_disk(5))
        depth = out.depth_normalized
        target_med = np.median(depth[target_fp])
        for other in scene.present_object_ids():
            if other == target_id or other in occluders:
                continue
            overlap = (out.id_map == other) & near_fp
            if not overlap.any():
                continue
            if np.median(depth[overlap]) < target_med:
                occluders.add(int(other))
    return sorted(occluders)
