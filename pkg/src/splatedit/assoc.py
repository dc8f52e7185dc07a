"""Cross-view association of 2D segmentation masks via Gaussian index sets.

Raw per-view masks (from any external segmenter) are lifted to sets of
splat indices, matched against the Key Object Database with the set-IoU
score, and painted back out as view-consistent label maps.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .scene import Camera, GaussianScene, MAX_OBJECT_IDS

DEFAULT_SIGMA = 0.2
MIN_MASK_PIXELS = 16
DEGENERATE_GAP_FRACTION = 0.01


@dataclass
class SegmentationFrame:
    """One view's raw segmentation: a camera and its binary masks."""

    camera: Camera
    masks: list

    def __post_init__(self):
        for m in self.masks:
            if m.shape != (self.camera.height, self.camera.width):
                raise ValueError("mask shape does not match camera image size")


@dataclass
class KeyObjectDatabase:
    """Map from global object id (dense from 1) to its supporting splat set."""

    entries: dict = field(default_factory=dict)  # id -> sorted int64 array

    @property
    def num_objects(self) -> int:
        return len(self.entries)

    def add(self, indices: np.ndarray) -> int:
        new_id = len(self.entries) + 1
        self.entries[new_id] = np.sort(np.asarray(indices, dtype=np.int64))
        return new_id

    def merge(self, obj_id: int, indices: np.ndarray) -> None:
        self.entries[obj_id] = np.union1d(self.entries[obj_id], indices)

    def best_match(self, indices: np.ndarray):
        """(id, score) of the highest-IoU entry; ties go to the smaller id."""
        best_id, best = 0, -1.0
        for obj_id in sorted(self.entries):
            score = gs_iou(self.entries[obj_id], indices)
            if score > best:
                best_id, best = obj_id, score
        return best_id, best

    def finalize(self) -> None:
        """Resolve transient overlaps: a contested index keeps its smallest id."""
        seen = np.zeros(0, dtype=np.int64)
        for obj_id in sorted(self.entries):
            cur = self.entries[obj_id]
            self.entries[obj_id] = np.setdiff1d(cur, seen, assume_unique=False)
            seen = np.union1d(seen, cur)

    def to_json(self) -> str:
        return json.dumps({str(k): v.tolist() for k, v in self.entries.items()},
                          indent=1)

    @classmethod
    def from_json(cls, text: str) -> "KeyObjectDatabase":
        raw = json.loads(text)
        return cls({int(k): np.asarray(v, dtype=np.int64) for k, v in raw.items()})


def gs_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection-over-union of two splat index sets; 0 when both empty."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.size == 0 and b.size == 0:
        return 0.0
    inter = np.intersect1d(a, b, assume_unique=False).size
    union = np.union1d(a, b).size
    return inter / union


def _split_1d(values: np.ndarray):
    """Exact 2-means on scalar data: best threshold split of the sorted values.

    Returns (member mask of the lower cluster, lower centroid, upper centroid).
    """
    order = np.argsort(values, kind="stable")
    v = values[order]
    n = v.size
    csum = np.cumsum(v)
    csq = np.cumsum(v * v)
    k = np.arange(1, n)
    sse_lo = csq[k - 1] - csum[k - 1] ** 2 / k
    sse_hi = (csq[-1] - csq[k - 1]) - (csum[-1] - csum[k - 1]) ** 2 / (n - k)
    split = int(np.argmin(sse_lo + sse_hi)) + 1
    lower = np.zeros(n, dtype=bool)
    lower[order[:split]] = True
    c_lo = csum[split - 1] / split
    c_hi = (csum[-1] - csum[split - 1]) / (n - split)
    return lower, c_lo, c_hi


def lift_mask(scene: GaussianScene, camera: Camera, mask: np.ndarray,
              keep_ratio: float | None = None) -> np.ndarray:
    """Indices of the splats a 2D mask selects.

    Candidates are splats whose projected center falls inside the mask with
    positive camera-space depth. A two-cluster split on candidate depth keeps
    the group closer to the camera; when the centroid gap is under 1% of the
    scene's depth extent the whole candidate set is returned. `keep_ratio`
    overrides the split and retains the nearest fraction instead (useful for
    dense bird's-eye captures).
    """
    uv, z = camera.project_points(scene.positions)
    px = np.floor(uv[:, 0] + 0.5).astype(np.int64)
    py = np.floor(uv[:, 1] + 0.5).astype(np.int64)
    infront = z > 0
    inimg = (infront & (px >= 0) & (px < camera.width)
             & (py >= 0) & (py < camera.height))
    cand = inimg.copy()
    cand[inimg] = mask[py[inimg], px[inimg]]
    cand_idx = np.nonzero(cand)[0]
    if cand_idx.size == 0:
        return cand_idx
    depths = z[cand_idx]
    if keep_ratio is not None:
        keep = max(1, int(np.ceil(keep_ratio * cand_idx.size)))
        order = np.argsort(depths, kind="stable")
        return np.sort(cand_idx[order[:keep]])
    if cand_idx.size < 2:
        return cand_idx
    lower, c_lo, c_hi = _split_1d(depths)
    extent = float(z[infront].max() - z[infront].min()) if infront.any() else 0.0
    if (c_hi - c_lo) < DEGENERATE_GAP_FRACTION * extent or extent == 0.0:
        return np.sort(cand_idx)
    return np.sort(cand_idx[lower])


def associate(scene: GaussianScene, frames: list, sigma: float = DEFAULT_SIGMA,
              min_mask_pixels: int = MIN_MASK_PIXELS,
              keep_ratio: float | None = None):
    """Assign globally consistent object ids to every frame's raw masks.

    Frames are processed in order (they should follow a continuous camera
    trajectory). Each mask is lifted to a splat set and matched to the
    database entry with the highest set-IoU; a match at or above `sigma`
    inherits that id and unions the sets, otherwise a new id is created
    (capped at 256; overflow masks paint id 0 with a warning).

    Returns (database, per-frame label maps). Within a frame, masks paint
    largest-first so smaller (likely foreground) masks win overlaps.
    """
    db = KeyObjectDatabase()
    label_maps = []
    for frame in frames:
        cam = frame.camera
        assigned = []  # (mask, area, global id)
        for mask in frame.masks:
            area = int(np.count_nonzero(mask))
            if area < min_mask_pixels:
                continue
            lifted = lift_mask(scene, cam, mask, keep_ratio=keep_ratio)
            if lifted.size == 0:
                continue
            best_id, best = db.best_match(lifted)
            if best_id and best >= sigma:
                db.merge(best_id, lifted)
                gid = best_id
            elif db.num_objects >= MAX_OBJECT_IDS:
                warnings.warn("object id capacity (256) exceeded; mask gets id 0")
                gid = 0
            else:
                gid = db.add(lifted)
            assigned.append((mask, area, gid))
        labels = np.zeros((cam.height, cam.width), dtype=np.int32)
        for mask, _, gid in sorted(assigned, key=lambda t: -t[1]):
            labels[mask] = gid
        label_maps.append(labels)
    db.finalize()
    return db, label_maps
