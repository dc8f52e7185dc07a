"""File formats besides PLY: cameras JSON, PNG maps, raw float containers."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .scene import Camera, SceneError


class CameraError(SceneError):
    pass


def _orthonormalize(rot: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the rows; rejects rank-deficient and mirrored poses."""
    rows = []
    for i in range(3):
        v = rot[i].astype(np.float64).copy()
        for u in rows:
            v -= (v @ u) * u
        norm = np.linalg.norm(v)
        if norm < 1e-9:
            raise CameraError("rotation matrix is not invertible")
        rows.append(v / norm)
    r = np.stack(rows)
    if np.linalg.det(r) < 0:
        raise CameraError("rotation has determinant -1 (mirrored pose)")
    return r


def camera_to_dict(cam: Camera) -> dict:
    return {
        "width": cam.width, "height": cam.height,
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "world_to_camera": cam.world_to_camera.tolist(),
    }


def camera_from_dict(d: dict) -> Camera:
    m = np.asarray(d["world_to_camera"], dtype=np.float64)
    if m.shape != (4, 4):
        raise CameraError("world_to_camera must be a 4x4 matrix")
    rot = _orthonormalize(m[:3, :3])
    return Camera(fx=float(d["fx"]), fy=float(d["fy"]),
                  cx=float(d["cx"]), cy=float(d["cy"]),
                  width=int(d["width"]), height=int(d["height"]),
                  rotation=rot, translation=m[:3, 3].astype(np.float64))


def load_cameras(path) -> list[Camera]:
    with open(path) as fh:
        doc = json.load(fh)
    return [camera_from_dict(d) for d in doc["cameras"]]


def save_cameras(cameras, path) -> None:
    doc = {"cameras": [camera_to_dict(c) for c in cameras]}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def save_label_map(labels: np.ndarray, path) -> None:
    """Label map as single-channel PNG; 8-bit when labels fit, else 16-bit."""
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 65535:
        raise ValueError("labels out of PNG range")
    if labels.max() <= 255:
        Image.fromarray(labels.astype(np.uint8), mode="L").save(path)
    else:
        Image.fromarray(labels.astype(np.uint16)).save(path)


def load_label_map(path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.ndim == 3:  # tolerate RGB label exports: use one channel
        arr = arr[:, :, 0]
    return arr.astype(np.int32)


def save_color_png(image: np.ndarray, path) -> None:
    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def load_color_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("RGB"))
    return arr.astype(np.float64) / 255.0


def save_depth_png(depth: np.ndarray, path, scale: float | None = None) -> float:
    """Depth as 16-bit PNG; returns the world-units-per-count scale factor."""
    depth = np.asarray(depth, dtype=np.float64)
    if scale is None:
        peak = float(depth.max()) if depth.size else 0.0
        scale = peak / 65535.0 if peak > 0 else 1.0
    counts = np.clip(np.round(depth / scale), 0, 65535).astype(np.uint16)
    Image.fromarray(counts).save(path)
    return scale


def load_depth_png(path, scale: float) -> np.ndarray:
    return np.asarray(Image.open(path)).astype(np.float64) * scale


def save_mask_png(mask: np.ndarray, path) -> None:
    Image.fromarray(np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8),
                    mode="L").save(path)


def load_mask_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) > 127


def save_raw_maps(path, **arrays) -> None:
    """Raw float container for depth/feature maps (npz)."""
    np.savez_compressed(path, **arrays)


def load_raw_maps(path) -> dict:
    with np.load(path) as f:
        return {k: f[k] for k in f.files}


def load_segmentation_dir(mask_dir, cameras) -> list:
    """Read per-view raw segmentation from a directory.

    Two layouts are accepted:
      * per-view label PNGs (each distinct nonzero value = one raw mask),
        matched to cameras by sorted filename order, or
      * a manifest.json listing {"frames": [{"view": i, "masks": [files]} |
        {"view": i, "labels": file}]} with binary per-mask PNGs.
    Returns a list of SegmentationFrame (imported lazily to avoid cycles).
    """
    from .assoc import SegmentationFrame

    mask_dir = Path(mask_dir)
    manifest = mask_dir / "manifest.json"
    frames = []
    if manifest.exists():
        with open(manifest) as fh:
            doc = json.load(fh)
        for entry in doc["frames"]:
            cam = cameras[entry["view"]]
            if "labels" in entry:
                labels = load_label_map(mask_dir / entry["labels"])
                masks = [labels == v for v in np.unique(labels) if v != 0]
            else:
                masks = [load_mask_png(mask_dir / f) for f in entry["masks"]]
            frames.append(SegmentationFrame(camera=cam, masks=masks))
        return frames
    paths = sorted(p for p in mask_dir.iterdir()
                   if p.suffix.lower() == ".png")
    if len(paths) != len(cameras):
        raise ValueError(f"{len(paths)} mask files for {len(cameras)} cameras; "
                         "provide a manifest.json to map views explicitly")
    for cam, p in zip(cameras, paths):
        labels = load_label_map(p)
        masks = [labels == v for v in np.unique(labels) if v != 0]
        frames.append(SegmentationFrame(camera=cam, masks=masks))
    return frames
