"""Depth-guided 3D inpainting over virtual views.

The 2D stage fills each view's exposure mask (conditioned on the previous
view's result, reprojected through its depth); the filled color+depth seed
new splats on the missing surface; their appearance is then optimized under
a hybrid loss: masked L1 plus full-image structural dissimilarity.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import files
from .edit import VirtualView
from .optim import Adam
from .raster import backward_appearance, render
from .scene import (Camera, FEATURE_DIM, GaussianScene, SceneError,
                    concat_scenes)
from .sh import C0 as SH_C0
from .sh import dc_from_color
from .ssim import d_ssim_and_grad

MAX_INIT_SPLATS = 50_000
PRUNE_OPACITY = 0.005


class InpaintError(SceneError):
    pass


class InpainterContractError(InpaintError):
    """An inpainter modified pixels outside the mask."""


@dataclass
class InpaintConfig:
    structural_weight: float = 0.2     # lambda_1: D-SSIM share of the loss
    perceptual_weight: float = 0.005   # lambda_2: only used with a plug-in
    iterations: int = 2000
    color_lr: float = 0.0025
    opacity_lr: float = 0.05
    init_opacity: float = 0.5
    scale_factor: float = 1.0          # multiple of nearest-neighbor spacing
    seed: int = 0

    def validate(self):
        if not (0.0 <= self.structural_weight <= 1.0):
            raise ValueError("structural_weight must lie in [0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class ConditionView:
    """Previously inpainted view used to guide the next fill."""

    color: np.ndarray
    depth: np.ndarray
    camera: Camera


class BuiltinInpainter:
    """Non-neural fill: reproject the condition view, then push-pull diffuse.

    Masked pixels first take colors/depths reprojected (z-buffered) from the
    condition view; remaining holes are filled by a valid-aware image
    pyramid. Pixels outside the mask pass through bit-exactly.
    """

    uses_condition = True
    inpaints_depth = True

    def fill(self, color, depth, mask, camera=None,
             condition: ConditionView | None = None):
        mask = np.asarray(mask, bool)
        if not mask.any():
            return color, depth
        out_c = color.copy()
        out_d = depth.copy()
        filled = ~mask
        if condition is not None and camera is not None:
            proj_c, proj_d, hit = _reproject(condition, camera)
            take = mask & hit
            out_c[take] = proj_c[take]
            out_d[take] = proj_d[take]
            filled = filled | take
        stack = np.concatenate([out_c, out_d[:, :, None]], axis=2)
        stack = _push_pull(stack, filled)
        hole = mask & ~filled
        out_c[hole] = stack[hole, :3]
        out_d[hole] = stack[hole, 3]
        final_c = np.where(mask[:, :, None], out_c, color)
        final_d = np.where(mask, out_d, depth)
        return final_c, final_d


def _reproject(condition: ConditionView, camera: Camera):
    """Z-buffered forward splat of the condition view into `camera`."""
    src_cam = condition.camera
    h, w = condition.depth.shape
    yy, xx = np.mgrid[0:h, 0:w]
    valid = condition.depth > 1e-9
    world = src_cam.unproject(xx[valid], yy[valid], condition.depth[valid])
    uv, z = camera.project_points(world)
    px = np.floor(uv[:, 0] + 0.5).astype(np.int64)
    py = np.floor(uv[:, 1] + 0.5).astype(np.int64)
    ok = (z > 1e-9) & (px >= 0) & (px < camera.width) & (py >= 0) & (py < camera.height)
    flat = py[ok] * camera.width + px[ok]
    zs = z[ok]
    npx = camera.height * camera.width
    zbuf = np.full(npx, np.inf)
    np.minimum.at(zbuf, flat, zs)
    winner = zs == zbuf[flat]
    proj_c = np.zeros((npx, 3))
    proj_d = np.zeros(npx)
    cols = condition.color[valid][ok]
    proj_c[flat[winner]] = cols[winner]
    proj_d[flat[winner]] = zs[winner]
    hit = np.zeros(npx, bool)
    hit[flat[winner]] = True
    return (proj_c.reshape(camera.height, camera.width, 3),
            proj_d.reshape(camera.height, camera.width),
            hit.reshape(camera.height, camera.width))


def _push_pull(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Fill invalid pixels from a valid-weighted image pyramid."""
    if valid.all():
        return values
    h, w, c = values.shape
    if h == 1 and w == 1:
        return values
    ph, pw = (h + 1) // 2 * 2, (w + 1) // 2 * 2
    vals = np.zeros((ph, pw, c))
    vals[:h, :w] = np.where(valid[:, :, None], values, 0.0)
    wts = np.zeros((ph, pw))
    wts[:h, :w] = valid
    vsum = (vals[0::2, 0::2] + vals[1::2, 0::2] + vals[0::2, 1::2] + vals[1::2, 1::2])
    wsum = (wts[0::2, 0::2] + wts[1::2, 0::2] + wts[0::2, 1::2] + wts[1::2, 1::2])
    down = vsum / np.maximum(wsum, 1e-12)[:, :, None]
    down_valid = wsum > 0
    down = _push_pull(down, down_valid)
    up = np.repeat(np.repeat(down, 2, axis=0), 2, axis=1)[:h, :w]
    out = np.where(valid[:, :, None], values, up)
    # a light diffusion pass softens block seams inside the filled region
    hole = ~valid
    for _ in range(2):
        padded = np.pad(out, ((1, 1), (1, 1), (0, 0)), mode="edge")
        avg = (padded[:-2, 1:-1] + padded[2:, 1:-1]
               + padded[1:-1, :-2] + padded[1:-1, 2:]) * 0.25
        out = np.where(hole[:, :, None], avg, out)
    return out


def recursive_inpaint(views: list, inpainter=None):
    """Fill each view's mask, conditioning every view on its predecessor.

    Returns [(color, depth), ...] in input order. The first view is filled
    unconditioned. Enforces the inpainter contract: pixels outside each
    mask must come back bit-identical.
    """
    if not views:
        raise InpaintError("no views to inpaint")
    inpainter = inpainter or BuiltinInpainter()
    results = []
    condition = None
    for i, view in enumerate(views):
        mask = np.asarray(view.mask, bool)
        try:
            cond = condition if getattr(inpainter, "uses_condition", False) else None
            color, depth = inpainter.fill(view.color, view.depth, mask,
                                          camera=view.camera, condition=cond)
        except Exception as exc:
            raise InpaintError(f"inpainter failed on view {i}: {exc}") from exc
        if (not np.array_equal(color[~mask], view.color[~mask])
                or not np.array_equal(depth[~mask], view.depth[~mask])):
            raise InpainterContractError(
                f"view {i}: inpainter changed pixels outside the mask")
        if not (np.isfinite(color).all() and np.isfinite(depth).all()):
            raise InpainterContractError(f"view {i}: non-finite inpainter output")
        results.append((color, depth))
        condition = ConditionView(color=color, depth=depth, camera=view.camera)
    return results


class ExternalDirectoryInpainter:
    """File bridge for running an external 2D inpainter offline.

    For view NNN the bridge writes color/depth/mask/condition images plus a
    manifest, then expects `view_NNN_color_inpainted.png` and
    `view_NNN_depth_inpainted.png` to appear (produced by the external
    tool between runs). Missing results raise, so a pipeline invocation is
    resumable: write inputs, run the tool, invoke again.
    """

    uses_condition = True
    inpaints_depth = True

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._index = 0

    def fill(self, color, depth, mask, camera=None, condition=None):
        i = self._index
        self._index += 1
        stem = f"view_{i:03d}"
        depth_scale = files.save_depth_png(depth, self.dir / f"{stem}_depth.png")
        files.save_color_png(color, self.dir / f"{stem}_color.png")
        files.save_mask_png(mask, self.dir / f"{stem}_mask.png")
        manifest = {
            "view": i,
            "color": f"{stem}_color.png",
            "depth": f"{stem}_depth.png",
            "depth_scale": depth_scale,
            "mask": f"{stem}_mask.png",
            "condition": f"{stem}_condition.png" if condition is not None else None,
            "expects": [f"{stem}_color_inpainted.png", f"{stem}_depth_inpainted.png"],
        }
        if condition is not None:
            files.save_color_png(condition.color, self.dir / f"{stem}_condition.png")
        with open(self.dir / f"{stem}_manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=1)
        cpath = self.dir / f"{stem}_color_inpainted.png"
        dpath = self.dir / f"{stem}_depth_inpainted.png"
        if not (cpath.exists() and dpath.exists()):
            raise InpaintError(
                f"external inpainter results missing for view {i}: run your "
                f"tool on {self.dir} and invoke again")
        out_c = files.load_color_png(cpath)
        out_d = files.load_depth_png(dpath, depth_scale)
        mask = np.asarray(mask, bool)
        # quantization through PNG must not leak outside the mask
        out_c = np.where(mask[:, :, None], out_c, color)
        out_d = np.where(mask, out_d, depth)
        return out_c, out_d


def init_gaussians_from_rgbd(color: np.ndarray, depth: np.ndarray,
                             mask: np.ndarray, camera: Camera,
                             config: InpaintConfig | None = None) -> GaussianScene:
    """Seed one splat per masked pixel by unprojecting inpainted color+depth.

    Depth must be alpha-normalized (metric). Pixel grids larger than 50k
    masked pixels are strided down. Scales are isotropic at the nearest
    neighbor spacing times `config.scale_factor`.
    """
    config = config or InpaintConfig()
    mask = np.asarray(mask, bool)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return GaussianScene(
            positions=np.zeros((0, 3)), log_scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)), opacities_raw=np.zeros(0),
            sh_dc=np.zeros((0, 3)), sh_rest=np.zeros((0, 3, 15)),
            features=np.zeros((0, FEATURE_DIM)),
            object_ids=np.zeros(0, np.int32))
    d = depth[ys, xs]
    if not np.isfinite(d).all():
        raise InpaintError("non-finite depth inside the mask")
    if ys.size > MAX_INIT_SPLATS:
        stride = int(math.ceil(ys.size / MAX_INIT_SPLATS))
        ys, xs = ys[::stride], xs[::stride]
        d = d[::stride]
    pos = camera.unproject(xs.astype(np.float64), ys.astype(np.float64), d)
    n = len(pos)
    if n > 1:
        dist, _ = cKDTree(pos).query(pos, k=2)
        spacing = dist[:, 1]
        spacing[spacing <= 0] = np.median(spacing[spacing > 0]) if (spacing > 0).any() else 1e-3
    else:
        spacing = np.full(n, float(np.mean(d)) / camera.fx)
    scale = np.log(np.maximum(spacing * config.scale_factor, 1e-9))
    o_raw = math.log(config.init_opacity / (1.0 - config.init_opacity))
    return GaussianScene(
        positions=pos,
        log_scales=np.repeat(scale[:, None], 3, axis=1),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        opacities_raw=np.full(n, o_raw),
        sh_dc=dc_from_color(color[ys, xs]),
        sh_rest=np.zeros((n, 3, 15)),
        features=np.zeros((n, FEATURE_DIM)),
        object_ids=np.zeros(n, np.int32),
    )


def inpaint_loss_and_grad(target: np.ndarray, rendered: np.ndarray,
                          mask: np.ndarray, config: InpaintConfig,
                          perceptual=None):
    """Hybrid loss: (1-l1w) masked L1 + l1w full-image D-SSIM (+ plug-in).

    Returns (loss, d loss / d rendered). The masked L1 averages over masked
    elements so its scale is mask-size independent.
    """
    mask = np.asarray(mask, bool)
    lam = config.structural_weight
    count = max(1, int(mask.sum())) * 3
    diff = (target - rendered) * mask[:, :, None]
    l1 = float(np.abs(diff).sum() / count)
    grad = -np.sign(diff) * mask[:, :, None] / count * (1.0 - lam)
    loss = (1.0 - lam) * l1
    if lam > 0:
        dval, dgrad = d_ssim_and_grad(target, rendered)
        loss += lam * dval
        grad += lam * dgrad
    if perceptual is not None:
        pval, pgrad = perceptual(target, rendered, mask)
        loss += config.perceptual_weight * pval
        grad += config.perceptual_weight * pgrad
    return loss, grad


def optimize_inpaint(scene_after: GaussianScene, new_splats: GaussianScene,
                     inpainted_views: list, config: InpaintConfig | None = None,
                     perceptual=None, progress_cb=None,
                     backend: str | None = None) -> GaussianScene:
    """Optimize the new splats' DC color and opacity against inpainted views.

    `inpainted_views` pairs each VirtualView's camera+mask with its
    (color, depth) fill: a list of (VirtualView, (color, depth)). One random
    view per Adam step (seeded). Existing splats are bit-frozen; new splats
    whose final opacity falls under 0.005 are pruned.
    """
    config = config or InpaintConfig()
    config.validate()
    if not inpainted_views:
        raise InpaintError("no inpainted views supplied")
    if len(new_splats) == 0:
        raise InpaintError("no new splats to optimize")
    combined = concat_scenes(scene_after, new_splats)
    n_fixed = len(scene_after)
    n_new = len(new_splats)
    rng = np.random.default_rng(config.seed)

    dc = combined.sh_dc[n_fixed:].copy()
    o_raw = combined.opacities_raw[n_fixed:].copy()
    # separate optimizers keep per-group learning rates independent
    opt_dc = Adam([dc], lr=config.color_lr)
    opt_o = Adam([o_raw], lr=config.opacity_lr)

    for it in range(config.iterations):
        view, (target, _) = inpainted_views[int(rng.integers(len(inpainted_views)))]
        combined.sh_dc[n_fixed:] = dc
        combined.opacities_raw[n_fixed:] = o_raw
        out = render(combined, view.camera, channels=("color",),
                     with_records=True, backend=backend)
        loss, grad_map = inpaint_loss_and_grad(target, out.color, view.mask,
                                               config, perceptual)
        grads = backward_appearance(combined, out, grad_map, backend=backend)
        opt_dc.step([grads.sh_dc[n_fixed:]])
        opt_o.step([grads.opacity_raw[n_fixed:]])
        if progress_cb is not None:
            progress_cb(it, loss)

    combined.sh_dc[n_fixed:] = dc
    combined.opacities_raw[n_fixed:] = o_raw
    keep_new = combined.opacities[n_fixed:] >= PRUNE_OPACITY
    keep = np.concatenate([np.ones(n_fixed, bool), keep_new])
    return combined.subset(np.nonzero(keep)[0])


def evaluate_inpaint_loss(scene: GaussianScene, inpainted_views: list,
                          config: InpaintConfig | None = None,
                          backend: str | None = None) -> float:
    """Mean hybrid loss over all views (diagnostic, no gradients)."""
    config = config or InpaintConfig()
    total = 0.0
    for view, (target, _) in inpainted_views:
        out = render(scene, view.camera, channels=("color",), backend=backend)
        loss, _ = inpaint_loss_and_grad(target, out.color, view.mask, config)
        total += loss
    return total / len(inpainted_views)


def cross_view_consistency(views: list, results: list) -> float:
    """Mean reprojected masked color difference between consecutive fills.

    For each consecutive pair, the earlier view's fill reprojects into the
    later view through the inpainted depth; the error averages the absolute
    color difference where it lands inside the later view's mask.
    """
    pairs = list(zip(views, results))
    diffs = []
    for (va, (ca, da)), (vb, (cb, _)) in zip(pairs, pairs[1:]):
        cond = ConditionView(color=ca, depth=da, camera=va.camera)
        proj_c, _, hit = _reproject(cond, vb.camera)
        use = hit & np.asarray(vb.mask, bool)
        if use.any():
            diffs.append(float(np.abs(proj_c[use] - cb[use]).mean()))
    return float(np.mean(diffs)) if diffs else 0.0
