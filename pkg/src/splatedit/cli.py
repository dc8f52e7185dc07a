"""Command-line pipeline driver.

Every subcommand exits nonzero with a single `error: ...` line on contract
violations; flags mirror the config TOML keys (see config.py for the
SPLATEDIT_* env override scheme).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import files, ply
from .assoc import associate
from .config import load_config
from .distill import DistillConfig, distill
from .edit import (make_virtual_views, nbs_mask, remove_object,
                   virtual_trajectory)
from .inpaint import (BuiltinInpainter, ExternalDirectoryInpainter,
                      InpaintConfig, init_gaussians_from_rgbd,
                      optimize_inpaint, recursive_inpaint)
from .metrics import MetricReport, amcr
from .raster import render
from .scene import GaussianScene, SceneError
from .synth import load_synth_spec, object_free_variant, synth_scene


class CliError(SystemExit):
    def __init__(self, message):
        print(f"error: {message}", file=sys.stderr)
        super().__init__(2)


def _load_scene(path) -> GaussianScene:
    try:
        return ply.load_scene(path)
    except (OSError, SceneError) as exc:
        raise CliError(f"cannot load scene {path}: {exc}")


def _load_cameras(path):
    try:
        return files.load_cameras(path)
    except (OSError, KeyError, SceneError) as exc:
        raise CliError(f"cannot load cameras {path}: {exc}")


def _cmd_synth(args, cfg):
    spec = load_synth_spec(args.spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene, cameras, labels = synth_scene(spec)
    ply.save_scene(scene, out / "scene.ply")
    files.save_cameras(cameras, out / "cameras.json")
    label_dir = out / "labels"
    label_dir.mkdir(exist_ok=True)
    for i, lm in enumerate(labels):
        files.save_label_map(lm, label_dir / f"view_{i:03d}.png")
    if args.object_free:
        gt, _, _ = synth_scene(object_free_variant(spec))
        ply.save_scene(gt, out / "scene_object_free.ply")
    print(f"wrote {len(scene)} splats, {len(cameras)} cameras to {out}")


def _cmd_associate(args, cfg):
    scene = _load_scene(args.scene)
    cameras = _load_cameras(args.cameras)
    try:
        frames = files.load_segmentation_dir(args.masks, cameras)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load masks: {exc}")
    db, label_maps = associate(scene, frames, sigma=args.sigma,
                               min_mask_pixels=cfg.associate.min_mask_pixels,
                               keep_ratio=cfg.associate.keep_ratio_or_none)
    Path(args.out_db).write_text(db.to_json())
    out_dir = Path(args.out_labels)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, lm in enumerate(label_maps):
        files.save_label_map(lm, out_dir / f"view_{i:03d}.png")
    print(f"associated {db.num_objects} objects over {len(frames)} frames")


def _cmd_distill(args, cfg):
    scene = _load_scene(args.scene)
    cameras = _load_cameras(args.cameras)
    label_dir = Path(args.labels)
    paths = sorted(label_dir.glob("*.png"))
    if len(paths) != len(cameras):
        raise CliError(f"{len(paths)} label maps for {len(cameras)} cameras")
    label_maps = [files.load_label_map(p) for p in paths]
    dcfg = DistillConfig(iterations=args.iterations,
                         spatial_weight=args.spatial_weight,
                         neighbors=cfg.distill.neighbors,
                         learning_rate=cfg.distill.learning_rate,
                         seed=args.seed)
    log_rows = []
    try:
        out = distill(scene, cameras, label_maps, dcfg,
                      log_cb=lambda *row: log_rows.append(row))
    except ValueError as exc:
        raise CliError(str(exc))
    ply.save_scene(out, args.out)
    if args.log:
        with open(args.log, "w") as fh:
            fh.write("iteration,loss_obj,loss_space,loss_total\n")
            for it, lo, ls, lt in log_rows:
                fh.write(f"{it},{lo:.8f},{ls:.8f},{lt:.8f}\n")
    counts = dict(zip(*np.unique(out.object_ids, return_counts=True)))
    print(f"distilled ids: {{{', '.join(f'{k}: {v}' for k, v in counts.items())}}}")


def _cmd_render(args, cfg):
    scene = _load_scene(args.scene)
    if args.background:
        scene.background = np.asarray(
            [float(x) for x in args.background.split(",")], dtype=np.float64)
    cameras = _load_cameras(args.cameras)
    indices = (range(len(cameras)) if args.view == "all"
               else [int(args.view)])
    channels = tuple(args.channels.split(","))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = cfg.render.workers or None
    for i in indices:
        if not (0 <= i < len(cameras)):
            raise CliError(f"view {i} out of range (have {len(cameras)})")
        out = render(scene, cameras[i], channels=channels, workers=workers)
        stem = f"view_{i:03d}"
        if out.color is not None:
            files.save_color_png(out.color, out_dir / f"{stem}_color.png")
        if "depth" in channels:
            scale = files.save_depth_png(out.depth_normalized,
                                         out_dir / f"{stem}_depth.png")
            (out_dir / f"{stem}_depth_scale.txt").write_text(str(scale))
        if out.id_map is not None:
            files.save_label_map(out.id_map, out_dir / f"{stem}_id.png")
        if args.raw:
            files.save_raw_maps(out_dir / f"{stem}_raw.npz",
                                depth=out.depth, alpha=out.alpha,
                                **({"feature": out.feature}
                                   if out.feature is not None else {}))
    print(f"rendered {len(list(indices))} view(s) to {out_dir}")


def _cmd_remove(args, cfg):
    scene = _load_scene(args.scene)
    ids = [int(x) for x in args.ids.split(",")]
    try:
        edited, record = remove_object(scene, ids, hull=args.hull)
    except SceneError as exc:
        raise CliError(str(exc))
    ply.save_scene(edited, args.out)
    if args.record:
        doc = {
            "removed_ids": record.removed_ids,
            "hull": record.hull,
            "removed_indices": record.removed_indices.tolist(),
            "splats": {
                "positions": record.removed_scene.positions.tolist(),
                "log_scales": record.removed_scene.log_scales.tolist(),
                "rotations": record.removed_scene.rotations.tolist(),
                "opacities_raw": record.removed_scene.opacities_raw.tolist(),
                "sh_dc": record.removed_scene.sh_dc.tolist(),
                "sh_rest": record.removed_scene.sh_rest.tolist(),
                "features": record.removed_scene.features.tolist(),
                "object_ids": record.removed_scene.object_ids.tolist()
                if record.removed_scene.object_ids is not None else None,
            },
        }
        Path(args.record).write_text(json.dumps(doc))
    print(f"removed {record.removed_indices.size} splats "
          f"({len(scene)} -> {len(edited)})")


def _cmd_trajectory(args, cfg):
    before = _load_scene(args.scene_before)
    after = _load_scene(args.scene_after)
    cameras = _load_cameras(args.cameras)
    try:
        traj = virtual_trajectory(before, after, cameras, args.id,
                                  count=args.count)
    except SceneError as exc:
        raise CliError(str(exc))
    files.save_cameras(traj, args.out)
    print(f"wrote {len(traj)} virtual cameras to {args.out}")


def _cmd_inpaint(args, cfg):
    before = _load_scene(args.scene_before)
    after = _load_scene(args.scene_after)
    traj = _load_cameras(args.trajectory)
    views = make_virtual_views(before, after, traj)
    if args.inpainter == "builtin":
        filler = BuiltinInpainter()
    else:
        filler = ExternalDirectoryInpainter(args.inpainter)
    try:
        results = recursive_inpaint(views, filler)
    except SceneError as exc:
        raise CliError(str(exc))
    seed_view = int(np.argmax([v.mask.sum() for v in views]))
    new = init_gaussians_from_rgbd(results[seed_view][0], results[seed_view][1],
                                   views[seed_view].mask, views[seed_view].camera,
                                   cfg.inpaint)
    if len(new) == 0:
        raise CliError("exposure masks are empty; nothing to inpaint")
    icfg = InpaintConfig(structural_weight=cfg.inpaint.structural_weight,
                         iterations=args.iterations, seed=args.seed)
    final = optimize_inpaint(after, new, list(zip(views, results)), icfg)
    ply.save_scene(final, args.out)
    print(f"inpainted: +{len(new)} seeded, {len(final)} total splats")


def _cmd_metrics(args, cfg):
    rendered = sorted(Path(args.rendered).glob("*_color.png"))
    reference = sorted(Path(args.reference).glob("*_color.png"))
    if len(rendered) != len(reference) or not rendered:
        raise CliError(f"view count mismatch: {len(rendered)} rendered "
                       f"vs {len(reference)} reference")
    masks = None
    if args.masks:
        masks = sorted(Path(args.masks).glob("*.png"))
        if len(masks) != len(rendered):
            raise CliError("mask count does not match view count")
    report = MetricReport()
    mask_arrays = []
    for i, (rp, gp) in enumerate(zip(rendered, reference)):
        a = files.load_color_png(rp)
        b = files.load_color_png(gp)
        m = files.load_mask_png(masks[i]) if masks else None
        if m is not None:
            mask_arrays.append(m)
        report.add_view(rp.stem, a, b, m)
    doc = report.to_json()
    if mask_arrays:
        parsed = json.loads(doc)
        parsed["amcr_pct"] = amcr(mask_arrays)
        doc = json.dumps(parsed, indent=1)
    if args.out_json:
        Path(args.out_json).write_text(doc)
    if args.out_csv:
        Path(args.out_csv).write_text(report.to_csv())
    print(doc)


def _cmd_serve(args, cfg):
    import uvicorn

    from .service import create_app
    scene = _load_scene(args.scene)
    cameras = _load_cameras(args.cameras)
    app = create_app(scene, cameras, cfg)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splatedit",
                                description="Object-aware Gaussian splat editing")
    p.add_argument("--config", help="TOML config file", default=None)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic oracle scene")
    s.add_argument("spec")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--object-free", action="store_true",
                   help="also write the object-free ground-truth scene")
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("associate", help="match 2D masks into object ids")
    s.add_argument("--scene", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--masks", required=True)
    s.add_argument("--sigma", type=float, default=0.2)
    s.add_argument("--out-db", required=True)
    s.add_argument("--out-labels", required=True)
    s.set_defaults(func=_cmd_associate)

    s = sub.add_parser("distill", help="train identity features and bake ids")
    s.add_argument("--scene", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--iterations", type=int, default=2000)
    s.add_argument("--spatial-weight", type=float, default=0.0005)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--log", default=None, help="training log CSV")
    s.set_defaults(func=_cmd_distill)

    s = sub.add_parser("render", help="render color/depth/id maps")
    s.add_argument("--scene", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--view", default="all", help="index or 'all'")
    s.add_argument("--channels", default="color,depth,id")
    s.add_argument("--background", default=None, help="r,g,b in [0,1]")
    s.add_argument("--raw", action="store_true", help="also write raw npz maps")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=_cmd_render)

    s = sub.add_parser("remove", help="remove objects by id")
    s.add_argument("--scene", required=True)
    s.add_argument("--ids", required=True, help="comma-separated ids")
    s.add_argument("--hull", action="store_true")
    s.add_argument("--out", required=True)
    s.add_argument("--record", default=None, help="undo record JSON")
    s.set_defaults(func=_cmd_remove)

    s = sub.add_parser("trajectory", help="virtual orbit around a removed object")
    s.add_argument("--scene-before", required=True)
    s.add_argument("--scene-after", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--id", type=int, required=True)
    s.add_argument("--count", type=int, default=30)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_trajectory)

    s = sub.add_parser("inpaint", help="fill the exposed region")
    s.add_argument("--scene-before", required=True)
    s.add_argument("--scene-after", required=True)
    s.add_argument("--trajectory", required=True)
    s.add_argument("--inpainter", default="builtin",
                   help="'builtin' or a directory for the external bridge")
    s.add_argument("--iterations", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_inpaint)

    s = sub.add_parser("metrics", help="compare two render sets")
    s.add_argument("--rendered", required=True)
    s.add_argument("--reference", required=True)
    s.add_argument("--masks", default=None)
    s.add_argument("--out-json", default=None)
    s.add_argument("--out-csv", default=None)
    s.set_defaults(func=_cmd_metrics)

    s = sub.add_parser("serve", help="HTTP editing service")
    s.add_argument("--scene", required=True)
    s.add_argument("--cameras", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8593)
    s.set_defaults(func=_cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (OSError, ValueError) as exc:
        raise CliError(f"bad config: {exc}")
    try:
        args.func(args, cfg)
    except CliError:
        raise
    except SceneError as exc:
        raise CliError(str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
