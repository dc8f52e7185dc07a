"""Tile-based forward rendering and analytic backward passes.

Forward output channels per pixel, front-to-back over depth-ordered splats
with blend weights w_i = alpha_i * T_i:

  color    sum_i c_i w_i + T_N * background
  depth    sum_i z_i w_i                  (raw sum, no background term)
  feature  sum_i f_i w_i
  alpha    sum_i w_i                      (equals 1 - T_N)
  id map   argmax over one-hot id blending, 0 where alpha < 0.5

Backward passes are exact transposes of the forward blend, replayed from
per-pixel blend records. Only identity features, DC color, and raw opacity
receive gradients; geometry and higher SH bands are frozen by design.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels_numpy as knp
from .backend import resolve_backend
from .scene import Camera, GaussianScene, SceneError, quat_to_rotmat
from .sh import C0 as SH_C0
from .sh import eval_sh

TILE = 16
NEAR_PLANE = 0.2
COV_LOWPASS = 0.3
DEFAULT_CHANNELS = ("color", "depth", "id")


class RenderError(SceneError):
    pass


class MissingRecordsError(RenderError):
    """Backward pass requested but render() ran without with_records=True."""


@dataclass
class ProjectedSplat:
    mean2d: np.ndarray   # (2,) pixel coordinates
    cov2d: np.ndarray    # (2, 2) pixels^2, after low-pass
    depth_z: float       # camera-space z
    radius: float        # screen-space 3-sigma radius, pixels
    index: int           # source index into the scene


@dataclass
class BlendRecords:
    """Per-pixel applied contributions, front-to-back, CSR over flat pixels."""

    offsets: np.ndarray        # (H*W + 1,) int64
    index: np.ndarray          # (M,) int32, original scene indices
    gauss: np.ndarray          # (M,) pre-opacity gaussian falloff at the pixel
    transmittance: np.ndarray  # (M,) T before applying this contribution
    shape: tuple


@dataclass
class AppearanceGradients:
    color: np.ndarray        # (N, 3) w.r.t. the evaluated per-view color
    sh_dc: np.ndarray        # (N, 3) chained to the raw DC coefficient
    opacity_raw: np.ndarray  # (N,)


@dataclass
class RenderOutput:
    camera: Camera
    alpha: np.ndarray
    transmittance: np.ndarray
    depth: np.ndarray
    color: np.ndarray | None = None
    feature: np.ndarray | None = None
    id_map: np.ndarray | None = None
    records: BlendRecords | None = None
    view_colors: np.ndarray | None = None     # (N, 3) evaluated SH colors
    color_clipmask: np.ndarray | None = None  # (N, 3) gradient gate of the clip

    @property
    def depth_normalized(self) -> np.ndarray:
        """Alpha-normalized depth D / A; metric where coverage is solid."""
        return np.where(self.alpha > 1e-8,
                        self.depth / np.maximum(self.alpha, 1e-8), 0.0)


@dataclass
class _Projection:
    means2d: np.ndarray
    cov2d: np.ndarray  # (N, 3) upper triangle a, b, c
    conics: np.ndarray
    depths: np.ndarray
    radii: np.ndarray
    bbox: np.ndarray   # (N, 4) int32 x0, x1, y0, y1
    valid: np.ndarray


def project_scene(scene: GaussianScene, camera: Camera) -> _Projection:
    """EWA projection of all splats; `valid` marks survivors of culling."""
    n = len(scene)
    if n == 0:
        z4 = np.zeros((0, 4), np.int32)
        z = np.zeros(0)
        return _Projection(np.zeros((0, 2)), np.zeros((0, 3)), np.zeros((0, 3)),
                           z, z, z4, np.zeros(0, bool))
    rot, tvec = camera.rotation, camera.translation
    pc = scene.positions @ rot.T + tvec
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    valid = z > NEAR_PLANE
    zs = np.where(valid, z, 1.0)

    u = camera.fx * x / zs + camera.cx
    v = camera.fy * y / zs + camera.cy

    # frustum clamp before the Jacobian (standard EWA practice)
    tan_fovx = camera.width / (2.0 * camera.fx)
    tan_fovy = camera.height / (2.0 * camera.fy)
    xc = np.clip(x / zs, -1.3 * tan_fovx, 1.3 * tan_fovx) * zs
    yc = np.clip(y / zs, -1.3 * tan_fovy, 1.3 * tan_fovy) * zs

    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = camera.fx / zs
    jac[:, 0, 2] = -camera.fx * xc / (zs * zs)
    jac[:, 1, 1] = camera.fy / zs
    jac[:, 1, 2] = -camera.fy * yc / (zs * zs)

    rq = quat_to_rotmat(scene.rotations)
    lmat = rq * scene.scales[:, None, :]
    cov3 = lmat @ np.transpose(lmat, (0, 2, 1))
    m = jac @ rot[None]
    cov2 = m @ cov3 @ np.transpose(m, (0, 2, 1))
    a = cov2[:, 0, 0] + COV_LOWPASS
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1] + COV_LOWPASS
    det = a * c - b * b
    valid &= det > 0

    dets = np.where(det > 0, det, 1.0)
    conics = np.stack([c / dets, -b / dets, a / dets], axis=1)

    mid = 0.5 * (a + c)
    disc = np.sqrt(np.maximum(mid * mid - dets, 0.0))
    radii = np.ceil(3.0 * np.sqrt(np.maximum(mid + disc, 0.0)))

    x0 = np.maximum(0, np.ceil(u - radii)).astype(np.int64)
    x1 = np.minimum(camera.width, np.floor(u + radii) + 1).astype(np.int64)
    y0 = np.maximum(0, np.ceil(v - radii)).astype(np.int64)
    y1 = np.minimum(camera.height, np.floor(v + radii) + 1).astype(np.int64)
    with np.errstate(invalid="ignore"):
        valid &= (x0 < x1) & (y0 < y1)
    bbox = np.stack([x0, x1, y0, y1], axis=1)
    bbox[~valid] = 0
    return _Projection(np.stack([u, v], axis=1), np.stack([a, b, c], axis=1),
                       conics, z, radii, bbox.astype(np.int32), valid)


def project(scene: GaussianScene, camera: Camera, index: int) -> ProjectedSplat | None:
    """Project one splat; returns None when culled."""
    proj = project_scene(scene, camera)
    if not proj.valid[index]:
        return None
    a, b, c = proj.cov2d[index]
    return ProjectedSplat(mean2d=proj.means2d[index],
                          cov2d=np.array([[a, b], [b, c]]),
                          depth_z=float(proj.depths[index]),
                          radius=float(proj.radii[index]),
                          index=index)


def _depth_order(proj: _Projection) -> np.ndarray:
    """Canonical blend order: ascending depth, ties by original index."""
    sel = np.nonzero(proj.valid)[0]
    order = np.argsort(proj.depths[sel], kind="stable")
    return sel[order]


def _bin_tiles(bbox: np.ndarray, width: int, height: int, tile: int):
    """CSR tile lists over splats given in blend order."""
    tiles_x = (width + tile - 1) // tile
    tiles_y = (height + tile - 1) // tile
    n_tiles = tiles_x * tiles_y
    k = bbox.shape[0]
    if k == 0:
        return tiles_x, np.zeros(n_tiles + 1, np.int64), np.zeros(0, np.int32)
    tx0 = bbox[:, 0] // tile
    tx1 = (bbox[:, 1] - 1) // tile
    ty0 = bbox[:, 2] // tile
    ty1 = (bbox[:, 3] - 1) // tile
    wx = (tx1 - tx0 + 1).astype(np.int64)
    wy = (ty1 - ty0 + 1).astype(np.int64)
    spans = wx * wy
    total = int(spans.sum())
    rep = np.repeat(np.arange(k, dtype=np.int32), spans)
    starts = np.zeros(k, np.int64)
    np.cumsum(spans[:-1], out=starts[1:])
    local = np.arange(total, dtype=np.int64) - np.repeat(starts, spans)
    lx = local % np.repeat(wx, spans)
    ly = local // np.repeat(wx, spans)
    tile_of = (np.repeat(ty0, spans) + ly) * tiles_x + (np.repeat(tx0, spans) + lx)
    order = np.argsort(tile_of, kind="stable")
    tids = rep[order]
    counts = np.bincount(tile_of, minlength=n_tiles)
    toffs = np.zeros(n_tiles + 1, np.int64)
    np.cumsum(counts, out=toffs[1:])
    return tiles_x, toffs, tids


def render(scene: GaussianScene, camera: Camera,
           channels=DEFAULT_CHANNELS, with_records: bool = False,
           backend: str | None = None, workers: int | None = None,
           tile_size: int = TILE) -> RenderOutput:
    """Render the scene from `camera`.

    channels: any of "color", "depth", "feature", "id". Alpha and
    transmittance are always produced. `with_records` retains the per-pixel
    blend lists required by the backward passes.
    """
    try:
        scene.validate()
    except SceneError as exc:
        raise RenderError(str(exc)) from exc
    backend = resolve_backend(backend)
    channels = set(channels)
    unknown = channels - {"color", "depth", "feature", "id", "alpha"}
    if unknown:
        raise ValueError(f"unknown channels {sorted(unknown)}")
    h, w = camera.height, camera.width
    has_color = "color" in channels
    has_feat = "feature" in channels
    has_id = "id" in channels and scene.object_ids is not None

    proj = project_scene(scene, camera)
    order = _depth_order(proj)
    means = np.ascontiguousarray(proj.means2d[order])
    conics = np.ascontiguousarray(proj.conics[order])
    bbox = np.ascontiguousarray(proj.bbox[order])
    depths = np.ascontiguousarray(proj.depths[order])
    opac = np.ascontiguousarray(scene.opacities[order])

    view_colors = None
    clipmask = None
    if has_color or with_records:
        dirs = scene.positions - camera.center
        norms = np.linalg.norm(dirs, axis=1, keepdims=True)
        dirs = dirs / np.maximum(norms, 1e-12)
        view_colors, clipmask = eval_sh(scene.sh_dc, scene.sh_rest, dirs)
    colors = (np.ascontiguousarray(view_colors[order]) if view_colors is not None
              else np.zeros((order.size, 3)))
    feats = (np.ascontiguousarray(scene.features[order]) if has_feat
             else np.zeros((order.size, 0)))
    if has_id:
        ids = np.ascontiguousarray(scene.object_ids[order].astype(np.int32))
        n_id_slots = int(scene.object_ids.max()) + 1 if len(scene) else 1
    else:
        ids = np.zeros(order.size, np.int32)
        n_id_slots = 1

    tile = tile_size if tile_size and tile_size > 0 else max(h, w, 1)
    tiles_x, toffs, tids = _bin_tiles(bbox, w, h, tile)
    bg = np.asarray(scene.background, dtype=np.float64)

    records = None
    if backend == "numpy":
        out = knp.forward_numpy(h, w, tile, tiles_x, toffs, tids,
                                means, conics, bbox, opac, depths, colors,
                                feats, ids, n_id_slots, bg,
                                has_color, has_feat, has_id, with_records)
        color, depth, feat, idmap, alpha, transm, rec = out
        if rec is not None:
            offsets, ridx, rgauss, rtrans = rec
            records = BlendRecords(offsets, order[ridx].astype(np.int32),
                                   rgauss, rtrans, (h, w))
    else:
        from . import _kernels_numba as knb
        restore = _set_workers(workers)
        try:
            color = np.zeros((h, w, 3)) if has_color else np.zeros((0, 0, 3))
            depth = np.zeros((h, w))
            feat = np.zeros((h, w, feats.shape[1])) if has_feat else np.zeros((0, 0, 0))
            idmap = np.zeros((h, w), np.int32) if has_id else np.zeros((0, 0), np.int32)
            alpha = np.zeros((h, w))
            transm = np.ones((h, w))
            if with_records:
                counts = np.zeros(h * w, np.int64)
                knb.count_kernel(h, w, tile, tiles_x, toffs, tids,
                                 means, conics, bbox, opac, counts)
                offsets = np.zeros(h * w + 1, np.int64)
                np.cumsum(counts, out=offsets[1:])
                m = int(offsets[-1])
                rpos = np.zeros(m, np.int32)
                rgauss = np.zeros(m)
                rtrans = np.zeros(m)
            else:
                offsets = np.zeros(1, np.int64)
                rpos = np.zeros(0, np.int32)
                rgauss = np.zeros(0)
                rtrans = np.zeros(0)
            knb.forward_kernel(h, w, tile, tiles_x, toffs, tids,
                               means, conics, bbox, opac, depths, colors,
                               feats, ids, n_id_slots, bg,
                               has_color, has_feat, has_id,
                               color, depth, feat, idmap, alpha, transm,
                               with_records, offsets, rpos, rgauss, rtrans)
            if with_records:
                records = BlendRecords(offsets, order[rpos].astype(np.int32),
                                       rgauss, rtrans, (h, w))
        finally:
            restore()

    return RenderOutput(
        camera=camera,
        alpha=alpha,
        transmittance=transm,
        depth=depth,
        color=color if has_color else None,
        feature=feat if has_feat else None,
        id_map=idmap if has_id else (np.zeros((h, w), np.int32)
                                     if "id" in channels else None),
        records=records,
        view_colors=view_colors,
        color_clipmask=clipmask,
    )


def _set_workers(workers: int | None):
    if workers is None:
        return lambda: None
    import numba
    previous = numba.get_num_threads()
    numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))
    return lambda: numba.set_num_threads(previous)


def backward_features(scene: GaussianScene, output: RenderOutput,
                      grad_feature_map: np.ndarray,
                      backend: str | None = None) -> np.ndarray:
    """d(loss)/d(features) given d(loss)/d(feature map).

    The feature map is linear in the features, so the gradient is the
    transpose of the forward blend: grad f_i = sum_px w_i(px) * grad_map(px).
    """
    rec = output.records
    if rec is None:
        raise MissingRecordsError("render() must be called with with_records=True")
    h, w = rec.shape
    fdim = grad_feature_map.shape[-1]
    grad_map = np.ascontiguousarray(grad_feature_map.reshape(h * w, fdim))
    grad = np.zeros((len(scene), fdim))
    opac = scene.opacities
    if resolve_backend(backend) == "numpy":
        knp.backward_features_numpy(rec.offsets, rec.index, rec.gauss,
                                    rec.transmittance, opac, grad_map, grad)
    else:
        from . import _kernels_numba as knb
        knb.backward_features_kernel(rec.offsets, rec.index, rec.gauss,
                                     rec.transmittance, opac, grad_map, grad)
    return grad


def backward_appearance(scene: GaussianScene, output: RenderOutput,
                        grad_color_map: np.ndarray,
                        backend: str | None = None) -> AppearanceGradients:
    """Gradients of a color-map loss w.r.t. DC color and raw opacity.

    Color is linear in the blend (grad = sum w * grad_map); opacity chains
    through alpha and every later transmittance via the back-to-front
    recurrence, then through the sigmoid activation.
    """
    rec = output.records
    if rec is None:
        raise MissingRecordsError("render() must be called with with_records=True")
    if output.view_colors is None or output.color_clipmask is None:
        raise MissingRecordsError("render() did not evaluate colors")
    h, w = rec.shape
    grad_map = np.ascontiguousarray(grad_color_map.reshape(h * w, 3))
    n = len(scene)
    grad_color = np.zeros((n, 3))
    grad_o = np.zeros(n)
    opac = scene.opacities
    tflat = output.transmittance.reshape(h * w)
    bg = np.asarray(scene.background, dtype=np.float64)
    if resolve_backend(backend) == "numpy":
        knp.backward_appearance_numpy(rec.offsets, rec.index, rec.gauss,
                                      rec.transmittance, tflat, opac,
                                      output.view_colors, grad_map, bg,
                                      grad_color, grad_o)
    else:
        from . import _kernels_numba as knb
        knb.backward_appearance_kernel(rec.offsets, rec.index, rec.gauss,
                                       rec.transmittance, tflat, opac,
                                       output.view_colors, grad_map, bg,
                                       grad_color, grad_o)
    grad_dc = grad_color * output.color_clipmask * SH_C0
    grad_opacity_raw = grad_o * opac * (1.0 - opac)
    return AppearanceGradients(color=grad_color, sh_dc=grad_dc,
                               opacity_raw=grad_opacity_raw)
