import numpy as np
import pytest

from splatedit.edit import (EditError, detect_occluders, make_virtual_views,
                            nbs_mask, object_center, pick_object,
                            remove_object, virtual_trajectory)
from splatedit.ply import load_scene, save_scene
from splatedit.raster import render
from splatedit.synth import synth_scene

from conftest import axis_camera, make_scene


def _blob_scene():
    spec = {
        "seed": 5,
        "image": {"width": 96, "height": 72},
        "ring": {"count": 8, "radius": 4.5, "height": 5.0, "fov_deg": 60,
                 "target": [0.0, 0.0, 0.8]},
        "backdrop": {"extent": 4.2, "spacing": 0.15, "z": 0.0, "opacity": 0.97},
        "blobs": [
            {"center": [-0.9, -0.2, 1.1], "count": 180, "spread": 0.28,
             "color": [0.85, 0.25, 0.2], "object_id": 1},
            {"center": [0.9, 0.2, 1.1], "count": 180, "spread": 0.28,
             "color": [0.2, 0.4, 0.85], "object_id": 2},
        ],
    }
    return synth_scene(spec)


# --------------------------------------------------------------------- pick

def test_pick_object_at_blob_center_and_background():
    scene, cams, labels = _blob_scene()
    cam, lm = cams[0], labels[0]
    ys, xs = np.nonzero(lm == 1)
    cy, cx = int(np.median(ys)), int(np.median(xs))
    assert pick_object(scene, cam, cx, cy) == 1
    ys0, xs0 = np.nonzero(lm == 0)
    assert pick_object(scene, cam, int(xs0[0]), int(ys0[0])) is None


def test_pick_after_removal_changes():
    scene, cams, labels = _blob_scene()
    cam, lm = cams[0], labels[0]
    ys, xs = np.nonzero(lm == 1)
    cy, cx = int(np.median(ys)), int(np.median(xs))
    edited, _ = remove_object(scene, [1])
    assert pick_object(edited, cam, cx, cy) != 1


def test_pick_out_of_bounds():
    scene, cams, _ = _blob_scene()
    with pytest.raises(EditError, match="out of bounds"):
        pick_object(scene, cams[0], -1, 3)


# ------------------------------------------------------------------ removal

def test_remove_object_count():
    scene, _, _ = _blob_scene()
    n1 = int((scene.object_ids == 1).sum())
    edited, rec = remove_object(scene, [1])
    assert len(edited) == len(scene) - n1
    assert rec.removed_indices.size == n1
    assert 1 not in edited.present_object_ids()


def test_remove_unknown_id_rejected():
    scene, _, _ = _blob_scene()
    with pytest.raises(EditError, match="7"):
        remove_object(scene, [7])


def test_hull_captures_interior_stray():
    # a cube of id-1 splats with an unlabeled stray at the centroid
    corners = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1)
                        for z in (-1, 1)], dtype=float) + [0, 0, 4.0]
    pts = np.vstack([corners, [[0, 0, 4.0]], [[5, 5, 9.0]]])
    ids = [1] * 8 + [0, 0]
    scene = make_scene(pts, ids=ids)
    edited, _ = remove_object(scene, [1], hull=False)
    assert len(edited) == 2  # stray survives without hull capture
    edited, rec = remove_object(scene, [1], hull=True)
    assert len(edited) == 1  # centroid stray captured, distant one kept
    assert np.allclose(edited.positions[0], [5, 5, 9.0])


def test_hull_degenerate_sets_skip_expansion():
    # coplanar removed set: hull expansion must be a no-op, not an error
    pts = np.array([[0, 0, 4.0], [1, 0, 4.0], [0, 1, 4.0], [1, 1, 4.0],
                    [0.5, 0.5, 4.0]])
    scene = make_scene(pts, ids=[1, 1, 1, 1, 0])
    edited, _ = remove_object(scene, [1], hull=True)
    assert len(edited) == 1


def test_remove_then_restore_bit_exact(tmp_path):
    scene, _, _ = _blob_scene()
    before = tmp_path / "before.ply"
    save_scene(scene, before)
    edited, rec = remove_object(scene, [2], hull=True)
    restored = rec.restore(edited)
    after = tmp_path / "after.ply"
    save_scene(restored, after)
    assert before.read_bytes() == after.read_bytes()


def test_removal_soundness_no_removed_id_rendered():
    scene, cams, _ = _blob_scene()
    edited, _ = remove_object(scene, [1], hull=True)
    for cam in cams:
        idm = render(edited, cam, channels=("id",)).id_map
        assert not np.any(idm == 1)


# ------------------------------------------------------------------- center

def test_object_center_cases():
    scene = make_scene([[1, 2, 3.0], [-1, -2, 5.0]], ids=[1, 2])
    assert np.allclose(object_center(scene, 1), [1, 2, 3])
    two = make_scene([[1, 1, 4.0], [-1, -1, 4.0]], ids=[3, 3])
    assert np.allclose(object_center(two, 3), [0, 0, 4.0])
    with pytest.raises(EditError):
        object_center(scene, 9)


def test_object_center_near_blob_spec_center():
    scene, _, _ = _blob_scene()
    c = object_center(scene, 1)
    assert np.linalg.norm(c - np.array([-0.9, -0.2, 1.1])) < 0.28


# ----------------------------------------------------------------- nbs mask

def test_nbs_identical_scenes_empty_mask():
    scene, cams, _ = _blob_scene()
    m = nbs_mask(scene, scene, cams[0])
    assert not m.any()


def test_nbs_object_over_reconstructed_floor_nearly_empty():
    scene, cams, labels = _blob_scene()
    # floor is fully reconstructed behind blob 1: removal exposes seen content
    edited, _ = remove_object(scene, [1])
    m = nbs_mask(scene, edited, cams[0])
    footprint = labels[0] == 1
    assert m.sum() <= 0.25 * footprint.sum()


def test_nbs_true_hole_masks_footprint():
    spec = {
        "seed": 5,
        "image": {"width": 96, "height": 72},
        "ring": {"count": 8, "radius": 3.0, "height": 6.0, "fov_deg": 60,
                 "target": [0.0, 0.0, 0.2]},
        "backdrop": {"extent": 3.6, "spacing": 0.1, "z": 0.0, "opacity": 0.97,
                     "hole": {"center": [0.0, 0.0], "radius": 0.8}},
        "blobs": [{"center": [0.0, 0.0, 0.35], "count": 300, "spread": 0.38,
                   "color": [0.85, 0.3, 0.2], "object_id": 1}],
    }
    scene, cams, labels = synth_scene(spec)
    edited, _ = remove_object(scene, [1])
    m = nbs_mask(scene, edited, cams[0])
    out_after = render(edited, cams[0], channels=("depth",))
    hole_px = (labels[0] == 1) & (out_after.alpha < 0.5)
    assert hole_px.sum() > 50
    assert (m & hole_px).sum() >= 0.9 * hole_px.sum()


def test_nbs_mask_grows_with_removed_set():
    scene, cams, _ = _blob_scene()
    one, _ = remove_object(scene, [1])
    both, _ = remove_object(scene, [1, 2])
    m_one = nbs_mask(scene, one, cams[0])
    m_both = nbs_mask(scene, both, cams[0])
    assert (m_one & ~m_both).sum() == 0  # pixelwise superset


# --------------------------------------------------------------- trajectory

def test_virtual_trajectory_contract():
    scene, cams, _ = _blob_scene()
    edited, _ = remove_object(scene, [1])
    traj = virtual_trajectory(scene, edited, cams, 1, count=12)
    assert len(traj) == 12
    center = object_center(scene, 1)
    eyes = np.stack([c.center for c in traj])
    # all cameras aim through the object center
    for cam in traj:
        to_center = center - cam.center
        axis = cam.forward
        cosang = (to_center @ axis) / np.linalg.norm(to_center)
        perp = np.linalg.norm(to_center - (to_center @ axis) * axis)
        assert cosang > 0
        assert perp < 1e-9 * max(1.0, np.linalg.norm(to_center))
    # eyes lie on one circle: a common plane and a common radius
    centroid = eyes.mean(axis=0)
    _, s, vt = np.linalg.svd(eyes - centroid)
    normal = vt[-1]
    radius = np.linalg.norm(eyes - centroid, axis=1).mean()
    assert np.abs((eyes - centroid) @ normal).max() < 1e-9 * radius
    radii = np.linalg.norm(eyes - centroid, axis=1)
    assert np.ptp(radii) < 1e-9 * radius
    # even angular spacing
    rel = (eyes - centroid)
    e1 = rel[0] / np.linalg.norm(rel[0])
    e2 = np.cross(normal, e1)
    ang = np.arctan2(rel @ e2, rel @ e1)
    steps = np.diff(np.unwrap(ang))
    assert np.allclose(np.abs(steps), 2 * np.pi / 12, atol=1e-9)


def test_virtual_trajectory_first_mask_in_band():
    scene, cams, _ = _blob_scene()
    edited, _ = remove_object(scene, [1])
    traj = virtual_trajectory(scene, edited, cams, 1, count=8)
    m = nbs_mask(scene, edited, traj[0])
    assert 0.01 <= m.mean() <= 0.50


def test_virtual_trajectory_needs_three_cameras():
    scene, cams, _ = _blob_scene()
    edited, _ = remove_object(scene, [1])
    with pytest.raises(EditError):
        virtual_trajectory(scene, edited, cams[:2], 1)


def test_make_virtual_views_shapes():
    scene, cams, _ = _blob_scene()
    edited, _ = remove_object(scene, [1])
    views = make_virtual_views(scene, edited, cams[:2])
    assert len(views) == 2
    v = views[0]
    assert v.color.shape == (72, 96, 3)
    assert v.depth.shape == (72, 96)
    assert v.mask.dtype == bool


# ---------------------------------------------------------------- occluders

def test_detect_occluders_separated_blobs_empty():
    spec = {
        "seed": 5,
        "image": {"width": 128, "height": 96},
        "ring": {"count": 6, "radius": 4.5, "height": 5.0, "fov_deg": 62,
                 "target": [0.0, 0.0, 0.8]},
        "blobs": [
            {"center": [-1.6, -0.4, 1.1], "count": 180, "spread": 0.25,
             "color": [0.85, 0.25, 0.2], "object_id": 1},
            {"center": [1.6, 0.4, 1.1], "count": 180, "spread": 0.25,
             "color": [0.2, 0.4, 0.85], "object_id": 2},
        ],
    }
    scene, cams, _ = synth_scene(spec)
    assert detect_occluders(scene, 1, cams) == []
    assert detect_occluders(scene, 2, cams) == []


def test_detect_occluders_stacked_blobs():
    spec = {
        "seed": 9,
        "image": {"width": 96, "height": 72},
        "ring": {"count": 4, "radius": 5.0, "height": 1.2, "fov_deg": 55,
                 "target": [0.0, 0.0, 0.9]},
        "blobs": [
            {"center": [0.0, 0.0, 0.9], "count": 220, "spread": 0.3,
             "color": [0.8, 0.2, 0.2], "object_id": 1},
            {"center": [1.6, 0.0, 0.9], "count": 220, "spread": 0.3,
             "color": [0.2, 0.2, 0.8], "object_id": 2},
        ],
    }
    scene, cams, _ = synth_scene(spec)
    # camera 0 sits at azimuth 0 (+x side): blob 2 occludes blob 1
    occ = detect_occluders(scene, 1, [cams[0]])
    assert occ == [2]
    assert detect_occluders(scene, 2, [cams[0]]) == []


def test_single_object_no_occluders():
    spec = {
        "seed": 2,
        "image": {"width": 64, "height": 48},
        "ring": {"count": 3, "radius": 4.0, "height": 2.0},
        "blobs": [{"center": [0.0, 0.0, 0.5], "count": 120, "spread": 0.25,
                   "color": [0.6, 0.6, 0.2], "object_id": 1}],
    }
    scene, cams, _ = synth_scene(spec)
    assert detect_occluders(scene, 1, cams) == []
